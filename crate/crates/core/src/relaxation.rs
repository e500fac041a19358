//! Collocation-driven relaxation of candidate scores.
//!
//! Every iteration blends each candidate's score with a contextual target:
//! its recognizer (prior) score times its collocation support against the
//! current top choices of neighbouring positions, normalized over the set.
//! Anchoring the target to the prior keeps the recognizer's evidence at the
//! fixed point instead of letting collocation alone decide. Updates are
//! synchronous: a step reads only the previous iteration's top1s.

use std::io::Write;

use crate::collocation::CollocationModel;
use crate::error::{Error, Result};
use crate::lattice::{Page, SentenceLattice};
use crate::par::{self, Execution};

/// Support assigned when a position has no neighbours at all.
pub const NEUTRAL_SUPPORT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxParams {
    /// Weight of the current score in the update.
    pub alpha: f64,
    /// Neighbour distance, 1 or 2.
    pub window: usize,
    /// Convergence threshold on the largest score change of a step.
    pub epsilon: f64,
    pub max_iters: usize,
    pub prune_floor: f64,
    pub keep_min: usize,
    /// Temperature of the MI squash.
    pub sigma: f64,
    pub execution: Execution,
}

impl Default for RelaxParams {
    fn default() -> Self {
        RelaxParams {
            alpha: 0.7,
            window: 1,
            epsilon: 1e-4,
            max_iters: 50,
            prune_floor: 0.02,
            keep_min: 3,
            sigma: 2.0,
            execution: Execution::default(),
        }
    }
}

impl RelaxParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::validation(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(1..=2).contains(&self.window) {
            return Err(Error::validation(format!("window {} not in {{1,2}}", self.window)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if self.keep_min == 0 {
            return Err(Error::validation("keep_min must be at least 1"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::validation("sigma must be positive"));
        }
        if !(0.0..1.0).contains(&self.prune_floor) {
            return Err(Error::validation("prune_floor outside [0,1)"));
        }
        Ok(())
    }

    fn check_model(&self, model: &CollocationModel) -> Result<()> {
        self.validate()?;
        if self.window > model.max_distance() {
            return Err(Error::validation(format!(
                "window {} exceeds the model's distance {}",
                self.window,
                model.max_distance()
            )));
        }
        Ok(())
    }
}

/// Mean collocation support of `cand` at `pos` against the top1 of every
/// neighbour within `window` on either side.
pub fn neighbor_support(
    sentence: &SentenceLattice,
    pos: usize,
    cand: &str,
    model: &CollocationModel,
    window: usize,
    sigma: f64,
) -> Result<f64> {
    let sets = sentence.positions();
    if pos >= sets.len() {
        return Err(Error::validation(format!(
            "position {pos} outside sentence of length {}",
            sets.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for d in 1..=window {
        if let Some(left) = pos.checked_sub(d) {
            total += model.support(&sets[left].top1().word, cand, d, sigma)?;
            n += 1;
        }
        if let Some(right) = sets.get(pos + d) {
            total += model.support(cand, &right.top1().word, d, sigma)?;
            n += 1;
        }
    }
    Ok(if n == 0 { NEUTRAL_SUPPORT } else { total / n as f64 })
}

fn check_prior(sentence: &SentenceLattice, prior: &SentenceLattice) -> Result<()> {
    if sentence.len() != prior.len() {
        return Err(Error::validation(format!(
            "prior has {} positions, sentence {}",
            prior.len(),
            sentence.len()
        )));
    }
    for (set, p) in sentence.positions().iter().zip(prior.positions()) {
        if let Some(c) = set.candidates().iter().find(|c| !p.contains(&c.word)) {
            return Err(Error::validation(format!(
                "candidate '{}' of image {} has no prior score",
                c.word,
                set.image_id()
            )));
        }
    }
    Ok(())
}

/// One synchronous update of a sentence against the recognizer scores in
/// `prior` (usually the sentence as it was before relaxation started).
/// Returns the new lattice and the largest absolute score change after
/// renormalization.
pub fn relax_step(
    sentence: &SentenceLattice,
    prior: &SentenceLattice,
    model: &CollocationModel,
    params: &RelaxParams,
) -> Result<(SentenceLattice, f64)> {
    params.check_model(model)?;
    check_prior(sentence, prior)?;
    step_unchecked(sentence, prior, model, params)
}

fn step_unchecked(
    sentence: &SentenceLattice,
    prior: &SentenceLattice,
    model: &CollocationModel,
    params: &RelaxParams,
) -> Result<(SentenceLattice, f64)> {
    if params.alpha == 1.0 {
        return Ok((sentence.clone(), 0.0));
    }
    let mut next = sentence.clone();
    let mut delta: f64 = 0.0;
    for (pos, set) in next.positions_mut().iter_mut().enumerate() {
        let anchor = &prior.positions()[pos];
        let mut target = Vec::with_capacity(set.len());
        for c in set.candidates() {
            let support = neighbor_support(sentence, pos, &c.word, model, params.window, params.sigma)?;
            target.push(anchor.score_of(&c.word).unwrap_or(0.0) * support);
        }
        let total: f64 = target.iter().sum();
        if total > 0.0 {
            target.iter_mut().for_each(|t| *t /= total);
        }
        let mut i = 0;
        set.reweight(|c| {
            let s = params.alpha * c.score + (1.0 - params.alpha) * target[i];
            i += 1;
            s
        })?;
        let old = &sentence.positions()[pos];
        for c in set.candidates() {
            let before = old.score_of(&c.word).unwrap_or(0.0);
            delta = delta.max((c.score - before).abs());
        }
    }
    Ok((next, delta))
}

fn same_leaders(a: &SentenceLattice, b: &SentenceLattice) -> bool {
    a.positions().iter().zip(b.positions()).all(|(x, y)| x.top1().word == y.top1().word)
}

/// How a sentence's relaxation ended.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRun {
    /// Steps applied, including the one that certified convergence.
    pub iterations: usize,
    pub converged: bool,
    /// Delta of each step, in order.
    pub deltas: Vec<f64>,
}

/// Relaxes one sentence in place until a step changes no score by
/// `epsilon` or more and keeps every top1, or `max_iters` steps have run.
/// The starting scores serve as the prior.
pub fn relax_sentence(
    sentence: &mut SentenceLattice,
    model: &CollocationModel,
    params: &RelaxParams,
) -> Result<SentenceRun> {
    let prior = sentence.clone();
    relax_sentence_from(sentence, &prior, model, params)
}

/// [`relax_sentence`] with an explicit prior.
pub fn relax_sentence_from(
    sentence: &mut SentenceLattice,
    prior: &SentenceLattice,
    model: &CollocationModel,
    params: &RelaxParams,
) -> Result<SentenceRun> {
    params.check_model(model)?;
    check_prior(sentence, prior)?;
    let mut deltas = Vec::new();
    let mut converged = false;
    while deltas.len() < params.max_iters {
        let (next, delta) = step_unchecked(sentence, prior, model, params)?;
        // support only reads neighbours' top1, so with the leaders unchanged
        // the next step shrinks every change by alpha
        let settled = same_leaders(sentence, &next);
        *sentence = next;
        deltas.push(delta);
        if delta < params.epsilon && settled {
            converged = true;
            break;
        }
    }
    Ok(SentenceRun {
        iterations: deltas.len(),
        converged,
        deltas,
    })
}

/// Per-sentence outcome of [`run_relaxation`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelaxReport {
    pub sentences: Vec<SentenceRun>,
}

impl RelaxReport {
    pub fn max_iterations(&self) -> usize {
        self.sentences.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn all_converged(&self) -> bool {
        self.sentences.iter().all(|s| s.converged)
    }

    /// Trace dump: `sentence TAB iter TAB delta` per step, iterations from 1.
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for (si, run) in self.sentences.iter().enumerate() {
            for (it, d) in run.deltas.iter().enumerate() {
                writeln!(out, "{si}\t{}\t{d:.6e}", it + 1)?;
            }
        }
        Ok(())
    }
}

/// Relaxes every sentence of the page independently.
pub fn run_relaxation(
    page: &Page,
    model: &CollocationModel,
    params: &RelaxParams,
) -> Result<(Page, RelaxReport)> {
    params.check_model(model)?;
    let mut out = page.clone();
    let runs = relax_sentences(&mut out, page, model, params, &vec![true; page.sentences().len()])?;
    let sentences: Vec<SentenceRun> = runs.into_iter().map(|r| r.unwrap_or_default()).collect();
    for (si, run) in sentences.iter().enumerate() {
        if !run.converged {
            log::debug!("sentence {si} stopped at max_iters without converging");
        }
    }
    Ok((out, RelaxReport { sentences }))
}

impl Default for SentenceRun {
    fn default() -> Self {
        SentenceRun {
            iterations: 0,
            converged: true,
            deltas: Vec::new(),
        }
    }
}

/// Relaxes the sentences flagged in `active` against the matching sentences
/// of `prior`, in parallel per sentence.
pub(crate) fn relax_sentences(
    page: &mut Page,
    prior: &Page,
    model: &CollocationModel,
    params: &RelaxParams,
    active: &[bool],
) -> Result<Vec<Option<SentenceRun>>> {
    let mut results: Vec<(&mut SentenceLattice, Option<Result<SentenceRun>>)> = page
        .sentences_mut()
        .iter_mut()
        .map(|s| (s, None))
        .collect();
    par::for_each_mut(params.execution, &mut results, |i, (s, r)| {
        if active[i] {
            *r = Some(relax_sentence_from(s, &prior.sentences()[i], model, params));
        }
    });
    results.into_iter().map(|(_, r)| r.transpose()).collect()
}

/// Drops candidates scoring under the floor, always keeping each set's top
/// `keep_min`, and renormalizes the survivors.
pub fn prune(page: &Page, params: &RelaxParams) -> Result<Page> {
    params.validate()?;
    let mut out = page.clone();
    for s in out.sentences_mut() {
        for set in s.positions_mut() {
            set.prune(params.prune_floor, params.keep_min)?;
        }
    }
    Ok(out)
}
