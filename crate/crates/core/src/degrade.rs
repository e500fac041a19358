//! Degradation simulator: a character-confusion channel plus dictionary
//! look-up that turns ground-truth words into recognizer-style candidate sets.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use strsim::levenshtein;

use crate::error::{Error, Result};
use crate::lattice::{decide_page, correct_rate, CandidateSet, ImageId, Page, SentenceLattice};
use crate::lexicon::Lexicon;
use crate::par;

/// Weight of edit distance in the candidate log-score.
pub const EDIT_WEIGHT: f64 = 1.0;
/// Weight of non-confusable edits in the candidate log-score.
pub const CHANNEL_WEIGHT: f64 = 0.5;
/// Lexicon retrieval radius around the corrupted string.
pub const RETRIEVAL_RADIUS: usize = 2;

const CALIBRATION_STEPS: usize = 30;
const MAX_SCORE_NOISE: f64 = 8.0;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Character confusion channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionModel {
    /// Groups of glyph strings that are mistaken for each other.
    pub classes: Vec<Vec<String>>,
    /// Per-unit substitution probability.
    pub sub_rate: f64,
    /// Probability that the true word is kept in its candidate set.
    pub truth_inclusion: f64,
    /// Standard deviation of Gaussian noise on candidate log-scores.
    pub score_noise: f64,
}

impl Default for ConfusionModel {
    fn default() -> Self {
        let classes = [
            &["f", "t"][..],
            &["o", "a", "e", "c"],
            &["l", "i", "1", "I"],
            &["m", "rn"],
            &["n", "h"],
            &["u", "v"],
        ];
        ConfusionModel {
            classes: classes
                .iter()
                .map(|c| c.iter().map(|s| s.to_string()).collect())
                .collect(),
            sub_rate: 0.1,
            truth_inclusion: 0.95,
            score_noise: 0.5,
        }
    }
}

impl ConfusionModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sub_rate) {
            return Err(Error::validation(format!(
                "sub_rate {} outside [0,1]",
                self.sub_rate
            )));
        }
        if !(self.truth_inclusion > 0.0 && self.truth_inclusion <= 1.0) {
            return Err(Error::validation(format!(
                "truth_inclusion {} outside (0,1]",
                self.truth_inclusion
            )));
        }
        if !(self.score_noise >= 0.0) || !self.score_noise.is_finite() {
            return Err(Error::validation(format!(
                "score_noise {} must be finite and non-negative",
                self.score_noise
            )));
        }
        for class in &self.classes {
            if class.len() < 2 || class.iter().any(String::is_empty) {
                return Err(Error::validation(
                    "confusion classes need at least two non-empty members",
                ));
            }
        }
        Ok(())
    }

    /// Classmates of `unit`, excluding itself.
    fn classmates(&self, unit: &str) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|c| c.iter().any(|m| m == unit))
            .flat_map(|c| c.iter().map(String::as_str))
            .filter(|m| *m != unit)
            .collect()
    }

    fn longest_member(&self) -> usize {
        self.classes
            .iter()
            .flatten()
            .map(|m| m.chars().count())
            .max()
            .unwrap_or(1)
    }

    /// Splits a word into channel units: the longest class member matching at
    /// each position, otherwise a single character.
    pub fn units(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let max_len = self.longest_member();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut taken = 1;
            for len in (1..=max_len.min(chars.len() - i)).rev() {
                let piece: String = chars[i..i + len].iter().collect();
                if self.classes.iter().flatten().any(|m| *m == piece) {
                    taken = len;
                    break;
                }
            }
            out.push(chars[i..i + taken].iter().collect());
            i += taken;
        }
        out
    }

    /// Edit cost where substituting one classmate for another is free.
    pub fn channel_cost(&self, candidate: &str, observed: &str) -> f64 {
        let a: Vec<char> = candidate.chars().collect();
        let b: Vec<char> = observed.chars().collect();
        let classes: Vec<Vec<Vec<char>>> = self
            .classes
            .iter()
            .map(|c| c.iter().map(|m| m.chars().collect()).collect())
            .collect();
        let mut dp = vec![vec![f64::INFINITY; b.len() + 1]; a.len() + 1];
        dp[0][0] = 0.0;
        for i in 0..=a.len() {
            for j in 0..=b.len() {
                let mut best = dp[i][j];
                if i > 0 {
                    best = best.min(dp[i - 1][j] + 1.0);
                }
                if j > 0 {
                    best = best.min(dp[i][j - 1] + 1.0);
                }
                if i > 0 && j > 0 {
                    let sub = if a[i - 1] == b[j - 1] { 0.0 } else { 1.0 };
                    best = best.min(dp[i - 1][j - 1] + sub);
                }
                for class in &classes {
                    for x in class.iter().filter(|x| x.len() <= i && a[i - x.len()..i] == x[..]) {
                        for y in class.iter().filter(|y| *y != x && y.len() <= j) {
                            if b[j - y.len()..j] == y[..] {
                                best = best.min(dp[i - x.len()][j - y.len()]);
                            }
                        }
                    }
                }
                dp[i][j] = best;
            }
        }
        dp[a.len()][b.len()]
    }
}

/// Reads a confusion model file: one class per line (members separated by
/// whitespace or commas) plus `sub_rate=`, `truth_inclusion=` and
/// `score_noise=` keys. Keys that are absent keep their defaults; if no class
/// lines appear the default classes are used.
pub fn read_confusion<R: BufRead>(input: R) -> Result<ConfusionModel> {
    let mut cm = ConfusionModel::default();
    let mut classes = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some((key, value)) = t.split_once('=') {
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad number '{}'", value.trim())))?;
            match key.trim() {
                "sub_rate" => cm.sub_rate = v,
                "truth_inclusion" => cm.truth_inclusion = v,
                "score_noise" => cm.score_noise = v,
                other => return Err(Error::parse(lineno, format!("unknown key '{other}'"))),
            }
            continue;
        }
        let members: Vec<String> = t
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if members.len() < 2 {
            return Err(Error::parse(lineno, "a class needs at least two members"));
        }
        classes.push(members);
    }
    if !classes.is_empty() {
        cm.classes = classes;
    }
    cm.validate()?;
    Ok(cm)
}

pub fn write_confusion<W: Write>(cm: &ConfusionModel, mut out: W) -> Result<()> {
    for class in &cm.classes {
        writeln!(out, "{}", class.join(" "))?;
    }
    writeln!(out, "sub_rate={}", cm.sub_rate)?;
    writeln!(out, "truth_inclusion={}", cm.truth_inclusion)?;
    writeln!(out, "score_noise={}", cm.score_noise)?;
    Ok(())
}

/// Corrupts `word` unit by unit: each unit with classmates is replaced, with
/// probability `sub_rate`, by a uniformly chosen classmate.
pub fn corrupt_word<R: Rng + ?Sized>(word: &str, cm: &ConfusionModel, rng: &mut R) -> String {
    corrupt_word_with(word, cm, |_, mates| {
        if rng.random::<f64>() < cm.sub_rate {
            Some(rng.random_range(0..mates.len()))
        } else {
            None
        }
    })
}

/// Corrupts `word` with an explicit chooser: for each unit that has
/// classmates, `choose(unit_index, classmates)` returns the index of the
/// replacement or `None` to keep the unit.
pub fn corrupt_word_with(
    word: &str,
    cm: &ConfusionModel,
    mut choose: impl FnMut(usize, &[&str]) -> Option<usize>,
) -> String {
    let mut out = String::with_capacity(word.len());
    for (i, unit) in cm.units(word).iter().enumerate() {
        let mates = cm.classmates(unit);
        match (!mates.is_empty()).then(|| choose(i, &mates)).flatten() {
            Some(k) => out.push_str(mates[k]),
            None => out.push_str(unit),
        }
    }
    out
}

fn log_score<R: Rng + ?Sized>(
    word: &str,
    observed: &str,
    cm: &ConfusionModel,
    noise: Option<&Normal<f64>>,
    rng: &mut R,
) -> f64 {
    let ed = levenshtein(word, observed) as f64;
    let cc = cm.channel_cost(word, observed);
    let eps = noise.map_or(0.0, |n| n.sample(rng));
    -EDIT_WEIGHT * ed - CHANNEL_WEIGHT * cc + eps
}

/// Simulates the recognizer for one word image.
pub fn generate_candidate_set<R: Rng + ?Sized>(
    image_id: ImageId,
    true_word: &str,
    lex: &Lexicon,
    cm: &ConfusionModel,
    k: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if !lex.contains(true_word) {
        return Err(Error::validation(format!(
            "true word '{true_word}' is not in the lexicon"
        )));
    }
    let noise = (cm.score_noise > 0.0)
        .then(|| Normal::new(0.0, cm.score_noise).expect("validated noise"));
    let observed = corrupt_word(true_word, cm, rng);

    let mut scored: Vec<(String, f64)> = lex
        .lookup(&observed, RETRIEVAL_RADIUS)
        .into_iter()
        .map(|(w, _)| (w.to_string(), log_score(w, &observed, cm, noise.as_ref(), rng)))
        .collect();
    let by_rank = |a: &(String, f64), b: &(String, f64)| {
        b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
    };
    scored.sort_by(by_rank);
    scored.truncate(k);

    let include = rng.random::<f64>() < cm.truth_inclusion;
    let present = scored.iter().position(|(w, _)| w == true_word);
    match (include, present) {
        (true, None) => {
            let s = log_score(true_word, &observed, cm, noise.as_ref(), rng);
            if scored.len() == k {
                scored.pop();
            }
            scored.push((true_word.to_string(), s));
            scored.sort_by(by_rank);
        }
        (false, Some(i)) => {
            scored.remove(i);
        }
        _ => {}
    }
    if scored.is_empty() {
        // widen the search for a stand-in when the truth was the only hit
        let max_len = observed.chars().count() + true_word.chars().count();
        let mut radius = RETRIEVAL_RADIUS + 1;
        while scored.is_empty() && radius <= max_len {
            scored = lex
                .lookup(&observed, radius)
                .into_iter()
                .filter(|(w, _)| *w != true_word)
                .take(k)
                .map(|(w, _)| (w.to_string(), log_score(w, &observed, cm, noise.as_ref(), rng)))
                .collect();
            radius += 1;
        }
        if scored.is_empty() {
            scored.push((true_word.to_string(), 0.0));
        }
    }

    let max = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scored.iter().map(|(_, s)| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let entries: Vec<(String, f64)> = scored
        .into_iter()
        .zip(weights)
        .map(|((w, _), x)| (w, (x / total).clamp(0.0, 1.0)))
        .collect();
    Ok(CandidateSet::with_limit(image_id, entries, k)?.with_truth(true_word))
}

/// Seed for one sentence of a page: page seed XOR sentence index.
pub fn sentence_seed(page_seed: u64, sentence_index: usize) -> u64 {
    page_seed ^ sentence_index as u64
}

/// Builds a page of simulated candidate sets. Image ids are assigned
/// consecutively from `first_id` in reading order. Tokens missing from the
/// lexicon get a singleton set holding the truth.
pub fn simulate_page<S: AsRef<str> + Sync>(
    sentences: &[Vec<S>],
    lex: &Lexicon,
    cm: &ConfusionModel,
    k: usize,
    seed: u64,
    first_id: u32,
) -> Result<Page> {
    cm.validate()?;
    let mut offsets = Vec::with_capacity(sentences.len());
    let mut next = first_id;
    for s in sentences {
        offsets.push(next);
        next += s.len() as u32;
    }
    let jobs: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
    let built: Vec<Result<SentenceLattice>> = par::map(&jobs, |&si| {
        let mut rng = rng_from_seed(sentence_seed(seed, si));
        let sets = sentences[si]
            .iter()
            .enumerate()
            .map(|(pi, tok)| {
                let id = ImageId(offsets[si] + pi as u32);
                let tok = tok.as_ref();
                if lex.contains(tok) {
                    generate_candidate_set(id, tok, lex, cm, k, &mut rng)
                } else {
                    Ok(CandidateSet::new(id, [(tok, 1.0)])?.with_truth(tok))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SentenceLattice::new(sets)
    });
    Page::new(built.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Top-1 correct rate of a simulated page.
pub fn top1_rate(page: &Page) -> Result<f64> {
    correct_rate(&decide_page(page), &page.truth_map())
}

fn measure<S: AsRef<str> + Sync>(
    lex: &Lexicon,
    cm: &ConfusionModel,
    sample: &[Vec<S>],
    k: usize,
    seed: u64,
) -> Result<f64> {
    top1_rate(&simulate_page(sample, lex, cm, k, seed, 0)?)
}

/// Adjusts `sub_rate` (and `score_noise` when `sub_rate` alone cannot reach
/// the target) until the simulated top-1 rate on `sample` lies within
/// `tolerance` of `target_top1`.
pub fn calibrate<S: AsRef<str> + Sync>(
    lex: &Lexicon,
    cm: &ConfusionModel,
    sample: &[Vec<S>],
    target_top1: f64,
    tolerance: f64,
    k: usize,
    seed: u64,
) -> Result<ConfusionModel> {
    if !(target_top1 > 0.0 && target_top1 <= 1.0) {
        return Err(Error::validation(format!(
            "calibration target {target_top1} outside (0,1]"
        )));
    }
    if sample.iter().all(Vec::is_empty) {
        return Err(Error::validation("calibration sample is empty"));
    }
    cm.validate()?;
    let mut steps = 0usize;
    let mut best = (f64::INFINITY, cm.clone(), 0.0);
    let mut probe = |model: &ConfusionModel, steps: &mut usize| -> Result<Option<f64>> {
        if *steps >= CALIBRATION_STEPS {
            return Ok(None);
        }
        *steps += 1;
        let rate = measure(lex, model, sample, k, seed)?;
        log::debug!(
            "calibrate: sub_rate={:.5} score_noise={:.4} -> {rate:.4}",
            model.sub_rate,
            model.score_noise
        );
        let gap = (rate - target_top1).abs();
        if gap < best.0 {
            best = (gap, model.clone(), rate);
        }
        Ok(Some(rate))
    };
    let within = |rate: f64| (rate - target_top1).abs() <= tolerance;

    // Phase 1: sub_rate over [0, 1]; the top-1 rate falls as sub_rate grows.
    let mut model = cm.clone();
    model.sub_rate = 0.0;
    let Some(at_zero) = probe(&model, &mut steps)? else { unreachable!() };
    if within(at_zero) {
        return Ok(model);
    }
    if at_zero < target_top1 {
        // even a clean channel is too noisy: reduce score noise
        let (mut lo, mut hi) = (0.0, cm.score_noise);
        while let Some(rate) = {
            model.score_noise = (lo + hi) / 2.0;
            probe(&model, &mut steps)?
        } {
            if within(rate) {
                return Ok(model);
            }
            if rate < target_top1 {
                hi = model.score_noise;
            } else {
                lo = model.score_noise;
            }
            if hi - lo < 1e-9 {
                model.score_noise = 0.0;
                if let Some(r) = probe(&model, &mut steps)? {
                    if within(r) {
                        return Ok(model);
                    }
                }
                break;
            }
        }
    } else {
        model.sub_rate = 1.0;
        let Some(at_one) = probe(&model, &mut steps)? else { unreachable!() };
        if within(at_one) {
            return Ok(model);
        }
        if at_one < target_top1 {
            let (mut lo, mut hi) = (0.0, 1.0);
            while let Some(rate) = {
                model.sub_rate = (lo + hi) / 2.0;
                probe(&model, &mut steps)?
            } {
                if within(rate) {
                    return Ok(model);
                }
                if rate > target_top1 {
                    lo = model.sub_rate;
                } else {
                    hi = model.sub_rate;
                }
            }
        } else {
            // Phase 2: sub_rate saturated; raise score noise to bury the truth.
            let (mut lo, mut hi) = (cm.score_noise, MAX_SCORE_NOISE);
            while let Some(rate) = {
                model.score_noise = (lo + hi) / 2.0;
                probe(&model, &mut steps)?
            } {
                if within(rate) {
                    return Ok(model);
                }
                if rate > target_top1 {
                    lo = model.score_noise;
                } else {
                    hi = model.score_noise;
                }
            }
        }
    }
    Err(Error::Calibration {
        best_rate: best.2,
        target: target_top1,
        tolerance,
    })
}

/// Fraction of sets that contain their truth.
pub fn truth_inclusion_rate(page: &Page) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for set in page.sets() {
        if let Some(t) = set.truth() {
            total += 1;
            hit += usize::from(set.contains(t));
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Word frequencies of a tokenized text, used to build desk lexica.
pub fn vocabulary<S: AsRef<str>>(sentences: &[Vec<S>]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for tok in sentences.iter().flatten() {
        *out.entry(tok.as_ref().to_string()).or_insert(0) += 1;
    }
    out
}
