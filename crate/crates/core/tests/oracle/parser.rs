//! Brute-force parser oracle: every (candidate assignment, tag sequence,
//! tree) derivation of a small random instance.

use candsel::degrade::rng_from_seed;
use candsel::lattice::{make_candidate_set, ImageId, SentenceLattice};
use candsel::parser::{inside_probability, parse_lattice, Grammar, TagLexicon};
use rand::Rng;

const NONTERMINALS: [&str; 4] = ["S", "A", "B", "C"];
const TAGS: [&str; 3] = ["X", "Y", "Z"];
const WORDS: [&str; 6] = ["w0", "w1", "w2", "w3", "w4", "w5"];

pub struct Instance {
    binary: Vec<(String, String, String, f64)>,
    unary: Vec<(String, String, f64)>,
    lexicon: Vec<(String, Vec<(String, f64)>)>,
    columns: Vec<Vec<(String, f64)>>,
}

fn normalized(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng_from_seed(seed);
    let symbols: Vec<&str> = NONTERMINALS.iter().chain(&TAGS).copied().collect();
    let mut binary = Vec::new();
    let mut unary = Vec::new();
    let mut rules = 0;
    for lhs in NONTERMINALS {
        // every nonterminal gets at least one unary so most spans parse
        let n_unary = rng.random_range(1..=2);
        // at most 4 rules per nonterminal; trim the last one to stay within 15
        let n_binary = rng.random_range(1..=2).min(15 - rules - n_unary);
        rules += n_unary + n_binary;
        let probs = normalized((0..n_unary + n_binary).map(|_| rng.random_range(0.1..1.0)).collect());
        let mut used_tags = Vec::new();
        for p in &probs[..n_unary] {
            let tag = TAGS[rng.random_range(0..TAGS.len())];
            if used_tags.contains(&tag) {
                // merge duplicates into the first rule
                let first: &mut (String, String, f64) =
                    unary.iter_mut().rev().find(|(l, t, _)| l == lhs && t == tag).unwrap();
                first.2 += p;
                continue;
            }
            used_tags.push(tag);
            unary.push((lhs.to_string(), tag.to_string(), *p));
        }
        let mut used_pairs = Vec::new();
        for p in &probs[n_unary..] {
            let l = symbols[rng.random_range(0..symbols.len())];
            let r = symbols[rng.random_range(0..symbols.len())];
            if used_pairs.contains(&(l, r)) {
                let first: &mut (String, String, String, f64) = binary
                    .iter_mut()
                    .rev()
                    .find(|(a, b, c, _)| a == lhs && b == l && c == r)
                    .unwrap();
                first.3 += p;
                continue;
            }
            used_pairs.push((l, r));
            binary.push((lhs.to_string(), l.to_string(), r.to_string(), *p));
        }
    }
    let lexicon = WORDS
        .iter()
        .map(|w| {
            let k = rng.random_range(1..=TAGS.len());
            let mut tags: Vec<&str> = TAGS.to_vec();
            for i in (1..tags.len()).rev() {
                tags.swap(i, rng.random_range(0..=i));
            }
            let probs = normalized((0..k).map(|_| rng.random_range(0.1..1.0)).collect());
            (
                w.to_string(),
                tags[..k].iter().zip(probs).map(|(t, p)| (t.to_string(), p)).collect(),
            )
        })
        .collect();
    let len = rng.random_range(1..=6);
    let columns = (0..len)
        .map(|_| {
            let k = rng.random_range(1..=4);
            let mut words: Vec<&str> = WORDS.to_vec();
            for i in (1..words.len()).rev() {
                words.swap(i, rng.random_range(0..=i));
            }
            let scores = normalized((0..k).map(|_| rng.random_range(0.05..1.0)).collect());
            words[..k].iter().zip(scores).map(|(w, s)| (w.to_string(), s)).collect()
        })
        .collect();
    Instance {
        binary,
        unary,
        lexicon,
        columns,
    }
}

/// Probabilities of every tree rooted at `sym` over `tags[i..j]`.
fn trees(inst: &Instance, sym: &str, tags: &[&str], i: usize, j: usize) -> Vec<f64> {
    let mut out = Vec::new();
    if TAGS.contains(&sym) {
        if j == i + 1 && tags[i] == sym {
            out.push(1.0);
        }
        return out;
    }
    if j == i + 1 {
        for (lhs, t, p) in &inst.unary {
            if lhs == sym && t == tags[i] {
                out.push(*p);
            }
        }
        return out;
    }
    for (lhs, l, r, p) in &inst.binary {
        if lhs != sym {
            continue;
        }
        for k in i + 1..j {
            let left = trees(inst, l, tags, i, k);
            if left.is_empty() {
                continue;
            }
            let right = trees(inst, r, tags, k, j);
            for a in &left {
                for b in &right {
                    out.push(p * a * b);
                }
            }
        }
    }
    out
}

/// (sum, max) over all derivations of the whole lattice.
pub fn brute_force(inst: &Instance) -> (f64, f64) {
    let n = inst.columns.len();
    let tag_probs = |w: &str| -> &[(String, f64)] {
        &inst.lexicon.iter().find(|(x, _)| x == w).unwrap().1
    };
    let (mut sum, mut max) = (0.0f64, 0.0f64);
    // odometer over (candidate, tag) choices per position
    let choices: Vec<Vec<(f64, &str)>> = inst
        .columns
        .iter()
        .map(|col| {
            col.iter()
                .flat_map(|(w, s)| tag_probs(w).iter().map(move |(t, p)| (s * p, t.as_str())))
                .collect()
        })
        .collect();
    let mut idx = vec![0usize; n];
    loop {
        let weight: f64 = idx.iter().zip(&choices).map(|(&k, c)| c[k].0).product();
        let tags: Vec<&str> = idx.iter().zip(&choices).map(|(&k, c)| c[k].1).collect();
        for t in trees(inst, "S", &tags, 0, n) {
            sum += weight * t;
            max = max.max(weight * t);
        }
        let mut p = 0;
        loop {
            if p == n {
                return (sum, max);
            }
            idx[p] += 1;
            if idx[p] < choices[p].len() {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

pub fn build(inst: &Instance) -> (Grammar, TagLexicon, SentenceLattice) {
    let binary: Vec<(&str, &str, &str, f64)> = inst
        .binary
        .iter()
        .map(|(a, b, c, p)| (a.as_str(), b.as_str(), c.as_str(), *p))
        .collect();
    let unary: Vec<(&str, &str, f64)> = inst.unary.iter().map(|(a, b, p)| (a.as_str(), b.as_str(), *p)).collect();
    let g = Grammar::new("S", &binary, &unary, &TAGS).unwrap();
    let tl = TagLexicon::new(inst.lexicon.clone(), &TAGS).unwrap();
    let sets = inst
        .columns
        .iter()
        .enumerate()
        .map(|(i, col)| make_candidate_set(ImageId(i as u32), col.iter().map(|(w, s)| (w.as_str(), *s))).unwrap())
        .collect();
    (g, tl, SentenceLattice::new(sets).unwrap())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Checks one instance. Ok(true) when the lattice parses.
pub fn check(seed: u64) -> Result<bool, String> {
    let inst = random_instance(seed);
    let (g, tl, sentence) = build(&inst);
    if g.rule_count() > 15 {
        return Err(format!("seed {seed}: {} rules", g.rule_count()));
    }
    let (sum, max) = brute_force(&inst);
    let inside = inside_probability(&sentence, &g, &tl);
    if rel_err(inside, sum) >= 1e-9 {
        return Err(format!("seed {seed}: inside {inside} vs {sum}"));
    }
    let result = parse_lattice(&sentence, &g, &tl);
    if max == 0.0 {
        return if result.is_parsed() {
            Err(format!("seed {seed}: parsed an unparsable lattice"))
        } else {
            Ok(false)
        };
    }
    let viterbi = result.log_score.exp();
    if rel_err(viterbi, max) >= 1e-9 {
        return Err(format!("seed {seed}: viterbi {viterbi} vs {max}"));
    }
    let tree = result.tree.as_ref().ok_or_else(|| format!("seed {seed}: no tree"))?;
    let rescored = tree.log_score(&g, &tl, &sentence).exp();
    if rel_err(rescored, max) >= 1e-9 {
        return Err(format!("seed {seed}: tree rescored to {rescored}"));
    }
    Ok(true)
}
