//! MI scores against a naive recount of the raw token stream.

mod oracle;

use candsel::collocation::train;
use oracle::collocation::{max_recount_error, random_corpus, VOCAB};
use proptest::prelude::*;

#[test]
fn mi_matches_recount_for_every_pair() {
    for seed in 0..25 {
        let worst = max_recount_error(seed);
        assert!(worst <= 1e-12, "seed {seed}: error {worst}");
    }
}

#[test]
fn repeated_bigram_example() {
    let corpus: Vec<Vec<&str>> = (0..100).map(|_| vec!["a", "b"]).collect();
    let model = train(&corpus, 2).unwrap();
    // (101 * 200) / (101 * 101)
    let expected = (200.0f64 / 101.0).log2();
    assert!((model.mi_score("a", "b", 1).unwrap() - expected).abs() <= 1e-12);
    assert!(model.mi_score("a", "b", 1).unwrap() > 0.0);
    assert!(model.mi_score("a", "b", 3).is_err());
}

proptest! {
    #[test]
    fn support_is_monotone_in_mi(seed in 0u64..500) {
        let corpus = random_corpus(seed, 120);
        let model = train(&corpus, 1).unwrap();
        let mut scored: Vec<(f64, f64)> = Vec::new();
        for a in VOCAB {
            for b in VOCAB {
                scored.push((model.mi_score(a, b, 1).unwrap(), model.support(a, b, 1, 2.0).unwrap()));
            }
        }
        scored.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in scored.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
            if w[0].0 < w[1].0 {
                prop_assert!(w[0].1 < w[1].1 || (w[1].0 - w[0].0) < 1e-9);
            }
        }
    }
}
