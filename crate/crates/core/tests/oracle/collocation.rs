//! Naive MI recount over the raw token stream.

use candsel::collocation::{load_model, save_model, train};
use candsel::degrade::rng_from_seed;
use rand::Rng;

pub const VOCAB: [&str; 8] = ["the", "form", "farm", "fill", "in", "application", ".", "river"];

/// Brute force: scan every sentence for the literal pattern.
pub fn recount_mi(corpus: &[Vec<&str>], a: &str, b: &str, d: usize) -> f64 {
    let n: usize = corpus.iter().map(Vec::len).sum();
    let count = |w: &str| corpus.iter().flatten().filter(|t| **t == w).count();
    let mut pair = 0;
    for s in corpus {
        for i in 0..s.len() {
            if i + d < s.len() && s[i] == a && s[i + d] == b {
                pair += 1;
            }
        }
    }
    ((pair as f64 + 1.0) * n as f64 / ((count(a) as f64 + 1.0) * (count(b) as f64 + 1.0))).log2()
}

pub fn random_corpus(seed: u64, max_tokens: usize) -> Vec<Vec<&'static str>> {
    let mut rng = rng_from_seed(seed);
    let mut corpus = Vec::new();
    let mut total = 0;
    while total < max_tokens {
        let len = rng.random_range(1..=9).min(max_tokens - total);
        // skewed choice so some pairs repeat many times
        let s: Vec<&str> = (0..len)
            .map(|_| VOCAB[rng.random_range(0..VOCAB.len()).min(rng.random_range(0..VOCAB.len()))])
            .collect();
        total += s.len();
        corpus.push(s);
    }
    corpus
}

/// Largest |model - recount| over every vocabulary pair (plus an unseen
/// word) and distances 1 and 2, on the trained and the reloaded model.
pub fn max_recount_error(seed: u64) -> f64 {
    let corpus = random_corpus(seed, 200);
    let model = train(&corpus, 2).unwrap();
    let mut buf = Vec::new();
    save_model(&model, &mut buf).unwrap();
    let reloaded = load_model(&buf[..]).unwrap();
    let mut worst = 0.0f64;
    for a in VOCAB.iter().chain(&["unseen"]) {
        for b in VOCAB.iter().chain(&["unseen"]) {
            for d in 1..=2 {
                let expected = recount_mi(&corpus, a, b, d);
                for m in [&model, &reloaded] {
                    worst = worst.max((m.mi_score(a, b, d).unwrap() - expected).abs());
                }
            }
        }
    }
    worst
}
