//! Candidate lattice data model.
//!
//! A page is a sequence of sentences, each sentence a "sausage" lattice: one
//! [`CandidateSet`] per word image, left to right. Candidate sets stay sorted
//! by score (descending, ties broken lexicographically by word) after every
//! mutation, so `top1` is always the first element.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::imaging::Bitmap;

/// Default maximum number of candidates per set (top-10 recognizer output).
pub const DEFAULT_K_MAX: usize = 10;

/// Sums within this distance of 1 are treated as already normalized.
const NORMALIZED_EPS: f64 = 1e-12;

/// Identifier of a word image, unique within a page.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageId(pub u32);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub word: String,
    pub score: f64,
}

impl Candidate {
    pub fn new(word: impl Into<String>, score: f64) -> Self {
        Candidate {
            word: word.into(),
            score,
        }
    }
}

fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.word.cmp(&b.word))
}

/// Ranked word hypotheses for one word image.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    image_id: ImageId,
    candidates: Vec<Candidate>,
    truth: Option<String>,
}

/// Builds a validated candidate set with the default size limit.
pub fn make_candidate_set<W: Into<String>>(
    image_id: ImageId,
    entries: impl IntoIterator<Item = (W, f64)>,
) -> Result<CandidateSet> {
    CandidateSet::with_limit(image_id, entries, DEFAULT_K_MAX)
}

impl CandidateSet {
    pub fn new<W: Into<String>>(
        image_id: ImageId,
        entries: impl IntoIterator<Item = (W, f64)>,
    ) -> Result<Self> {
        Self::with_limit(image_id, entries, DEFAULT_K_MAX)
    }

    /// Builds a set holding at most `k_max` candidates.
    pub fn with_limit<W: Into<String>>(
        image_id: ImageId,
        entries: impl IntoIterator<Item = (W, f64)>,
        k_max: usize,
    ) -> Result<Self> {
        let mut candidates = Vec::new();
        let mut seen = HashSet::new();
        for (word, score) in entries {
            let word = word.into();
            if word.is_empty() {
                return Err(Error::validation(format!(
                    "image {image_id}: empty candidate word"
                )));
            }
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::validation(format!(
                    "image {image_id}: score {score} of '{word}' outside [0,1]"
                )));
            }
            if !seen.insert(word.clone()) {
                return Err(Error::validation(format!(
                    "image {image_id}: duplicate candidate '{word}'"
                )));
            }
            candidates.push(Candidate { word, score });
        }
        if candidates.is_empty() {
            return Err(Error::validation(format!(
                "image {image_id}: candidate set is empty"
            )));
        }
        if k_max == 0 || candidates.len() > k_max {
            return Err(Error::validation(format!(
                "image {image_id}: {} candidates exceeds limit {k_max}",
                candidates.len()
            )));
        }
        candidates.sort_by(rank_order);
        Ok(CandidateSet {
            image_id,
            candidates,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: impl Into<String>) -> Self {
        self.truth = Some(truth.into());
        self
    }

    pub fn image_id(&self) -> ImageId {
        self.image_id
    }

    pub fn truth(&self) -> Option<&str> {
        self.truth.as_deref()
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn top1(&self) -> &Candidate {
        &self.candidates[0]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.position(word).is_some()
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.word == word)
    }

    pub fn score_of(&self, word: &str) -> Option<f64> {
        self.candidates
            .iter()
            .find(|c| c.word == word)
            .map(|c| c.score)
    }

    pub fn max_score(&self) -> f64 {
        self.candidates[0].score
    }

    pub fn score_sum(&self) -> f64 {
        self.candidates.iter().map(|c| c.score).sum()
    }

    /// Sets one candidate's raw score and restores sort order.
    ///
    /// Fails if `word` is absent or the score is outside [0,1].
    pub fn set_score(&mut self, word: &str, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::validation(format!("score {score} outside [0,1]")));
        }
        let idx = self.position(word).ok_or_else(|| {
            Error::validation(format!("image {}: no candidate '{word}'", self.image_id))
        })?;
        self.candidates[idx].score = score;
        self.resort();
        Ok(())
    }

    /// Replaces every score with `f(candidate)` and renormalizes.
    ///
    /// Intermediate values may leave [0,1]; only the renormalized result must
    /// satisfy the score invariant.
    pub(crate) fn reweight(&mut self, mut f: impl FnMut(&Candidate) -> f64) -> Result<()> {
        for i in 0..self.candidates.len() {
            let s = f(&self.candidates[i]);
            self.candidates[i].score = s;
        }
        self.normalize_in_place()
    }

    /// Sets `word`'s score to `max_score + bonus` and renormalizes, unless it is
    /// already the strict top candidate. Returns whether anything changed.
    pub(crate) fn promote(&mut self, word: &str, bonus: f64) -> Result<bool> {
        let Some(idx) = self.position(word) else {
            return Ok(false);
        };
        if idx == 0 && (self.len() == 1 || self.candidates[1].score < self.candidates[0].score) {
            return Ok(false);
        }
        let target = self.max_score() + bonus;
        self.candidates[idx].score = target;
        self.normalize_in_place()?;
        Ok(true)
    }

    /// Sets `word`'s raw score to `score` and renormalizes. Returns false if
    /// the word is absent.
    pub(crate) fn assign_and_normalize(&mut self, word: &str, score: f64) -> Result<bool> {
        let Some(idx) = self.position(word) else {
            return Ok(false);
        };
        self.candidates[idx].score = score;
        self.normalize_in_place()?;
        Ok(true)
    }

    /// Multiplies the top candidate's score by `factor` and renormalizes.
    pub(crate) fn scale_top1(&mut self, factor: f64) -> Result<()> {
        self.candidates[0].score *= factor;
        self.normalize_in_place()
    }

    /// Keeps the first `keep_min` candidates plus all others scoring at least
    /// `floor`, then renormalizes. Returns the number removed.
    pub(crate) fn prune(&mut self, floor: f64, keep_min: usize) -> Result<usize> {
        let before = self.candidates.len();
        let mut idx = 0;
        self.candidates.retain(|c| {
            let keep = idx < keep_min || c.score >= floor;
            idx += 1;
            keep
        });
        let removed = before - self.candidates.len();
        if removed > 0 {
            self.normalize_in_place()?;
        }
        Ok(removed)
    }

    /// Divides scores by their sum. Sets already summing to 1 within 1e-12 are
    /// left bit-identical.
    pub fn normalize_in_place(&mut self) -> Result<()> {
        let sum = self.score_sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::Degenerate(format!(
                "image {}: cannot normalize scores summing to {sum}",
                self.image_id
            )));
        }
        if (sum - 1.0).abs() > NORMALIZED_EPS {
            for c in &mut self.candidates {
                c.score /= sum;
            }
        }
        self.resort();
        Ok(())
    }

    fn resort(&mut self) {
        self.candidates.sort_by(rank_order);
    }
}

pub fn top1(set: &CandidateSet) -> &Candidate {
    set.top1()
}

/// Returns a copy of `set` with scores summing to one.
pub fn normalize_scores(set: &CandidateSet) -> Result<CandidateSet> {
    let mut out = set.clone();
    out.normalize_in_place()?;
    Ok(out)
}

/// One sentence: candidate sets for consecutive word images.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceLattice {
    positions: Vec<CandidateSet>,
}

impl SentenceLattice {
    pub fn new(positions: Vec<CandidateSet>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::validation("sentence lattice has no positions"));
        }
        let mut ids = HashSet::new();
        for p in &positions {
            if !ids.insert(p.image_id()) {
                return Err(Error::validation(format!(
                    "duplicate image id {} in sentence",
                    p.image_id()
                )));
            }
        }
        Ok(SentenceLattice { positions })
    }

    pub fn positions(&self) -> &[CandidateSet] {
        &self.positions
    }

    pub(crate) fn positions_mut(&mut self) -> &mut [CandidateSet] {
        &mut self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn normalize_in_place(&mut self) -> Result<()> {
        self.positions
            .iter_mut()
            .try_for_each(CandidateSet::normalize_in_place)
    }
}

/// A text page: sentences plus optional word-image bitmaps.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Page {
    sentences: Vec<SentenceLattice>,
    bitmaps: BTreeMap<ImageId, Bitmap>,
}

impl Page {
    pub fn new(sentences: Vec<SentenceLattice>) -> Result<Self> {
        let mut ids = HashSet::new();
        for set in sentences.iter().flat_map(|s| s.positions()) {
            if !ids.insert(set.image_id()) {
                return Err(Error::validation(format!(
                    "image id {} occurs twice on the page",
                    set.image_id()
                )));
            }
        }
        Ok(Page {
            sentences,
            bitmaps: BTreeMap::new(),
        })
    }

    /// Attaches word bitmaps; every key must name a position on the page.
    pub fn with_bitmaps(mut self, bitmaps: BTreeMap<ImageId, Bitmap>) -> Result<Self> {
        let ids: HashSet<ImageId> = self.sets().map(CandidateSet::image_id).collect();
        if let Some(stray) = bitmaps.keys().find(|id| !ids.contains(id)) {
            return Err(Error::validation(format!(
                "bitmap for unknown image id {stray}"
            )));
        }
        self.bitmaps = bitmaps;
        Ok(self)
    }

    pub fn sentences(&self) -> &[SentenceLattice] {
        &self.sentences
    }

    pub(crate) fn sentences_mut(&mut self) -> &mut [SentenceLattice] {
        &mut self.sentences
    }

    pub fn bitmaps(&self) -> &BTreeMap<ImageId, Bitmap> {
        &self.bitmaps
    }

    pub fn sets(&self) -> impl Iterator<Item = &CandidateSet> {
        self.sentences.iter().flat_map(|s| s.positions())
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(SentenceLattice::len).sum()
    }

    /// Maps each image id to its (sentence, position) coordinates.
    pub fn locate_all(&self) -> HashMap<ImageId, (usize, usize)> {
        let mut out = HashMap::with_capacity(self.word_count());
        for (si, s) in self.sentences.iter().enumerate() {
            for (pi, set) in s.positions().iter().enumerate() {
                out.insert(set.image_id(), (si, pi));
            }
        }
        out
    }

    pub fn set_at(&self, at: (usize, usize)) -> &CandidateSet {
        &self.sentences[at.0].positions[at.1]
    }

    pub(crate) fn set_at_mut(&mut self, at: (usize, usize)) -> &mut CandidateSet {
        &mut self.sentences[at.0].positions[at.1]
    }

    /// Ground truth of every position that carries one.
    pub fn truth_map(&self) -> BTreeMap<ImageId, String> {
        self.sets()
            .filter_map(|s| s.truth().map(|t| (s.image_id(), t.to_string())))
            .collect()
    }

    pub fn normalize_in_place(&mut self) -> Result<()> {
        self.sentences
            .iter_mut()
            .try_for_each(SentenceLattice::normalize_in_place)
    }
}

/// Decided word per image id.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DecisionSequence(pub BTreeMap<ImageId, String>);

impl DecisionSequence {
    pub fn get(&self, id: ImageId) -> Option<&str> {
        self.0.get(&id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Decided words in page order.
    pub fn words_in_order(&self, page: &Page) -> Vec<String> {
        page.sets()
            .map(|s| self.0[&s.image_id()].clone())
            .collect()
    }
}

/// Picks the top-ranked candidate at every position.
pub fn decide_page(page: &Page) -> DecisionSequence {
    DecisionSequence(
        page.sets()
            .map(|s| (s.image_id(), s.top1().word.clone()))
            .collect(),
    )
}

/// Fraction of positions whose decision equals the truth (exact match).
pub fn correct_rate(
    decisions: &DecisionSequence,
    truth: &BTreeMap<ImageId, String>,
) -> Result<f64> {
    if decisions.0.len() != truth.len() || decisions.0.keys().any(|k| !truth.contains_key(k)) {
        return Err(Error::validation(
            "decision and truth cover different image ids",
        ));
    }
    if truth.is_empty() {
        return Err(Error::validation("no positions to score"));
    }
    let correct = decisions
        .0
        .iter()
        .filter(|(id, w)| truth[*id] == **w)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

// ---------------------------------------------------------------------------
// Page interchange format
// ---------------------------------------------------------------------------

fn format_score(score: f64) -> String {
    format!("{score:.6}")
}

/// Writes the line-based page format: one position per line
/// (`id TAB truth TAB word:score,...`), sentences separated by blank lines.
pub fn write_page<W: Write>(page: &Page, mut out: W) -> Result<()> {
    for (si, sentence) in page.sentences().iter().enumerate() {
        if si > 0 {
            writeln!(out)?;
        }
        for set in sentence.positions() {
            // order by the rounded score so a reader re-sorts to the same sequence
            let mut entries: Vec<(String, &str)> = set
                .candidates()
                .iter()
                .map(|c| (format_score(c.score), c.word.as_str()))
                .collect();
            entries.sort_by(|a, b| {
                let sa: f64 = a.0.parse().unwrap_or(0.0);
                let sb: f64 = b.0.parse().unwrap_or(0.0);
                sb.total_cmp(&sa).then_with(|| a.1.cmp(b.1))
            });
            let cands: Vec<String> = entries
                .iter()
                .map(|(s, w)| format!("{w}:{s}"))
                .collect();
            writeln!(
                out,
                "{}\t{}\t{}",
                set.image_id(),
                set.truth().unwrap_or(""),
                cands.join(",")
            )?;
        }
    }
    Ok(())
}

pub fn page_to_string(page: &Page) -> String {
    let mut buf = Vec::new();
    write_page(page, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("page text is utf-8")
}

fn is_score_literal(s: &str) -> bool {
    let mut parts = s.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

/// Splits `word:score,word:score,...` where words may themselves contain
/// `:` or `,` (punctuation tokens).
fn parse_entries(field: &str, line: usize) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    let mut rest = field;
    while !rest.is_empty() {
        let mut found = None;
        for (i, _) in rest.match_indices(':').filter(|(i, _)| *i >= 1) {
            let tail = &rest[i + 1..];
            let end = tail.find(',').unwrap_or(tail.len());
            if is_score_literal(&tail[..end]) {
                found = Some((i, end));
                break;
            }
        }
        let (colon, end) =
            found.ok_or_else(|| Error::parse(line, format!("malformed candidate list '{rest}'")))?;
        let word = &rest[..colon];
        let score_text = &rest[colon + 1..colon + 1 + end];
        let score: f64 = score_text
            .parse()
            .map_err(|_| Error::parse(line, format!("bad score '{score_text}'")))?;
        out.push((word.to_string(), score));
        let consumed = colon + 1 + end;
        rest = &rest[consumed..];
        if let Some(r) = rest.strip_prefix(',') {
            if r.is_empty() {
                return Err(Error::parse(line, "trailing comma in candidate list"));
            }
            rest = r;
        }
    }
    Ok(out)
}

pub fn read_page<R: BufRead>(input: R) -> Result<Page> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(
                    SentenceLattice::new(std::mem::take(&mut current))
                        .map_err(|e| Error::parse(lineno, e.to_string()))?,
                );
            }
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(truth), Some(cands)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(lineno, "expected 3 tab-separated fields"));
        };
        let id: u32 = id
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad image id '{id}'")))?;
        let entries = parse_entries(cands, lineno)?;
        let mut set = CandidateSet::with_limit(ImageId(id), entries, usize::MAX)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if !truth.is_empty() {
            set = set.with_truth(truth);
        }
        current.push(set);
    }
    if !current.is_empty() {
        sentences.push(SentenceLattice::new(current).map_err(|e| Error::parse(0, e.to_string()))?);
    }
    Page::new(sentences).map_err(|e| Error::parse(0, e.to_string()))
}

pub fn page_from_str(text: &str) -> Result<Page> {
    read_page(text.as_bytes())
}

/// The worked example sentence used throughout the docs and tests.
pub mod fixtures {
    use super::*;

    /// Candidate columns of the example sentence "Please fill in the
    /// application form !" with the recognizer's raw scores.
    pub fn example_columns() -> Vec<Vec<(&'static str, f64)>> {
        vec![
            vec![
                ("Please", 0.90),
                ("Fleece", 0.05),
                ("Pierce", 0.02),
                ("Fierce", 0.02),
                ("Pieces", 0.01),
            ],
            vec![
                ("fin", 0.33),
                ("fill", 0.30),
                ("flu", 0.21),
                ("flit", 0.10),
                ("till", 0.06),
            ],
            vec![
                ("in", 0.30),
                ("In", 0.28),
                ("lo", 0.25),
                ("ill", 0.13),
                ("Io", 0.04),
            ],
            vec![
                ("tire", 0.80),
                ("toe", 0.10),
                ("lire", 0.05),
                ("the", 0.03),
                ("Ike", 0.02),
            ],
            vec![
                ("application", 0.90),
                ("applicators", 0.05),
                ("acquisition", 0.03),
                ("duplication", 0.01),
                ("implication", 0.01),
            ],
            vec![
                ("farm", 0.35),
                ("form", 0.30),
                ("forth", 0.20),
                ("foam", 0.11),
                ("force", 0.04),
            ],
            vec![("!", 1.0)],
        ]
    }

    pub const EXAMPLE_TRUTH: [&str; 7] = ["Please", "fill", "in", "the", "application", "form", "!"];

    pub fn example_page() -> Page {
        let sets = example_columns()
            .into_iter()
            .enumerate()
            .map(|(i, col)| {
                make_candidate_set(ImageId(i as u32 + 1), col)
                    .unwrap()
                    .with_truth(EXAMPLE_TRUTH[i])
            })
            .collect();
        Page::new(vec![SentenceLattice::new(sets).unwrap()]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn words(set: &CandidateSet) -> Vec<&str> {
        set.candidates().iter().map(|c| c.word.as_str()).collect()
    }

    #[test]
    fn farm_is_top_of_column_six() {
        let set = make_candidate_set(ImageId(6), example_columns()[5].clone()).unwrap();
        assert_eq!(set.top1(), &Candidate::new("farm", 0.35));
        assert_eq!(words(&set), ["farm", "form", "forth", "foam", "force"]);
    }

    #[test]
    fn singleton_and_tie_break() {
        let set = make_candidate_set(ImageId(0), [("x", 1.0)]).unwrap();
        assert_eq!(top1(&set), &Candidate::new("x", 1.0));
        let tie = make_candidate_set(ImageId(0), [("b", 0.5), ("a", 0.5)]).unwrap();
        assert_eq!(words(&tie), ["a", "b"]);
    }

    #[test]
    fn construction_errors() {
        let empty: Vec<(&str, f64)> = vec![];
        assert!(matches!(
            make_candidate_set(ImageId(0), empty),
            Err(Error::Validation(_))
        ));
        let err = make_candidate_set(ImageId(0), [("a", 1.2)]).unwrap_err();
        assert!(err.to_string().contains("'a'"));
        let err = make_candidate_set(ImageId(0), [("a", 0.2), ("a", 0.3)]).unwrap_err();
        assert!(err.to_string().contains("duplicate candidate 'a'"));
        let many: Vec<(String, f64)> = (0..11).map(|i| (format!("w{i}"), 0.05)).collect();
        assert!(make_candidate_set(ImageId(0), many).is_err());
    }

    #[test]
    fn raising_form_makes_it_top() {
        let mut set = make_candidate_set(ImageId(6), example_columns()[5].clone()).unwrap();
        set.set_score("form", 0.6).unwrap();
        assert_eq!(set.top1(), &Candidate::new("form", 0.6));
        assert!(set.set_score("nope", 0.1).is_err());
    }

    #[test]
    fn normalization_examples() {
        let set = make_candidate_set(ImageId(0), [("a", 0.2), ("b", 0.2)]).unwrap();
        let n = normalize_scores(&set).unwrap();
        assert_eq!(n.score_of("a"), Some(0.5));
        assert_eq!(n.score_of("b"), Some(0.5));

        // column 2 sums to 1.00, so ratios are preserved and the sum is 1
        let set = make_candidate_set(ImageId(2), example_columns()[1].clone()).unwrap();
        let n = normalize_scores(&set).unwrap();
        assert!((n.score_sum() - 1.0).abs() < 1e-9);
        for (orig, new) in set.candidates().iter().zip(n.candidates()) {
            assert_eq!(orig.word, new.word);
            assert!((new.score - orig.score / 1.00).abs() < 1e-9);
        }

        let one = make_candidate_set(ImageId(0), [("a", 1.0)]).unwrap();
        assert_eq!(normalize_scores(&one).unwrap(), one);

        let zero = make_candidate_set(ImageId(0), [("a", 0.0), ("b", 0.0)]).unwrap();
        assert!(matches!(normalize_scores(&zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn example_page_decisions() {
        let page = example_page();
        let d = decide_page(&page);
        assert_eq!(
            d.words_in_order(&page).join(" "),
            "Please fin in tire application farm !"
        );
        // Please, in, application and "!" agree with the truth
        let rate = correct_rate(&d, &page.truth_map()).unwrap();
        assert!((rate - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn decided_page_after_selection() {
        let mut page = example_page();
        let fixes = [(1, "fill"), (3, "the"), (5, "form")];
        for (pos, word) in fixes {
            let set = &mut page.sentences_mut()[0].positions_mut()[pos];
            set.set_score(word, 0.95).unwrap();
        }
        let d = decide_page(&page);
        assert_eq!(
            d.words_in_order(&page).join(" "),
            "Please fill in the application form !"
        );
        assert_eq!(correct_rate(&d, &page.truth_map()).unwrap(), 1.0);
    }

    #[test]
    fn single_position_page() {
        let set = make_candidate_set(ImageId(9), [("x", 1.0)])
            .unwrap()
            .with_truth("x");
        let page = Page::new(vec![SentenceLattice::new(vec![set]).unwrap()]).unwrap();
        let d = decide_page(&page);
        assert_eq!(d.get(ImageId(9)), Some("x"));
        assert_eq!(correct_rate(&d, &page.truth_map()).unwrap(), 1.0);
    }

    #[test]
    fn correct_rate_rejects_domain_mismatch() {
        let page = example_page();
        let d = decide_page(&page);
        let mut truth = page.truth_map();
        truth.remove(&ImageId(1));
        assert!(correct_rate(&d, &truth).is_err());
    }

    #[test]
    fn page_validation() {
        let a = make_candidate_set(ImageId(1), [("a", 1.0)]).unwrap();
        assert!(SentenceLattice::new(vec![a.clone(), a.clone()]).is_err());
        assert!(SentenceLattice::new(vec![]).is_err());
        let s1 = SentenceLattice::new(vec![a.clone()]).unwrap();
        assert!(Page::new(vec![s1.clone(), s1.clone()]).is_err());
        let page = Page::new(vec![s1]).unwrap();
        let mut bm = BTreeMap::new();
        bm.insert(ImageId(5), crate::imaging::render_word("a").unwrap());
        assert!(page.with_bitmaps(bm).is_err());
    }

    #[test]
    fn page_format_round_trip() {
        let page = example_page();
        let text = page_to_string(&page);
        assert!(text.starts_with("1\tPlease\tPlease:0.900000,Fleece:0.050000,"));
        let back = page_from_str(&text).unwrap();
        assert_eq!(page_to_string(&back), text);
        assert_eq!(decide_page(&back), decide_page(&page));
    }

    #[test]
    fn page_format_handles_punctuation_words() {
        let text = "1\t,\t,:0.600000,::0.400000\n2\t\ta:1.000000\n\n3\t!\t!:1.000000\n";
        let page = page_from_str(text).unwrap();
        assert_eq!(page.sentences().len(), 2);
        let first = page.set_at((0, 0));
        assert_eq!(first.score_of(","), Some(0.6));
        assert_eq!(first.score_of(":"), Some(0.4));
        assert_eq!(page.set_at((0, 1)).truth(), None);
        assert_eq!(page_to_string(&page), text);
    }

    #[test]
    fn page_format_errors_carry_line_numbers() {
        let err = page_from_str("1\tx\tx:1.0\n2\tbroken\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = page_from_str("1\tx\tx:abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = page_from_str("q\tx\tx:1.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    fn arb_set() -> impl Strategy<Value = CandidateSet> {
        prop::collection::btree_map("[a-z]{1,6}", 0.001f64..1.0, 1..8).prop_map(|m| {
            make_candidate_set(ImageId(0), m.into_iter().collect::<Vec<_>>()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn sorted_and_scale_stable(set in arb_set(), scale in 0.01f64..1.0) {
            let c = set.candidates();
            prop_assert!(c.windows(2).all(|w| w[0].score >= w[1].score));
            let scaled = make_candidate_set(
                ImageId(0),
                c.iter().map(|c| (c.word.clone(), c.score * scale)).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert_eq!(&scaled.top1().word, &set.top1().word);
        }

        #[test]
        fn normalize_is_idempotent(set in arb_set()) {
            let once = normalize_scores(&set).unwrap();
            let twice = normalize_scores(&once).unwrap();
            prop_assert!((once.score_sum() - 1.0).abs() < 1e-9);
            for (a, b) in once.candidates().iter().zip(twice.candidates()) {
                prop_assert_eq!(&a.word, &b.word);
                prop_assert!((a.score - b.score).abs() < 1e-12);
            }
        }

        #[test]
        fn rate_invariant_under_normalization(sets in prop::collection::vec(arb_set(), 1..6)) {
            let sets: Vec<CandidateSet> = sets
                .into_iter()
                .enumerate()
                .map(|(i, s)| {
                    let truth = s.candidates().last().unwrap().word.clone();
                    CandidateSet::new(
                        ImageId(i as u32),
                        s.candidates().iter().map(|c| (c.word.clone(), c.score)).collect::<Vec<_>>(),
                    ).unwrap().with_truth(truth)
                })
                .collect();
            let page = Page::new(vec![SentenceLattice::new(sets).unwrap()]).unwrap();
            let mut normalized = page.clone();
            normalized.normalize_in_place().unwrap();
            let truth = page.truth_map();
            prop_assert_eq!(
                correct_rate(&decide_page(&page), &truth).unwrap(),
                correct_rate(&decide_page(&normalized), &truth).unwrap()
            );
        }

        #[test]
        fn page_text_round_trips(sets in prop::collection::vec(arb_set(), 1..5)) {
            let sets: Vec<CandidateSet> = sets
                .into_iter()
                .enumerate()
                .map(|(i, s)| CandidateSet::new(
                    ImageId(i as u32),
                    s.candidates().iter().map(|c| (c.word.clone(), c.score)).collect::<Vec<_>>(),
                ).unwrap())
                .collect();
            let page = Page::new(vec![SentenceLattice::new(sets).unwrap()]).unwrap();
            let text = page_to_string(&page);
            let again = page_to_string(&page_from_str(&text).unwrap());
            prop_assert_eq!(again, text);
        }
    }
}
