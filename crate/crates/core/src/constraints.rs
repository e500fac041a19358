//! Visual inter-word constraints on candidate decisions.
//!
//! Image-level relations between word images imply string-level relations
//! between their identities. Consistent top choices are boosted; for type-1
//! (same word) edges an inconsistent low-confidence image follows the
//! high-confidence one, and type-1 clusters vote on a shared identity.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use crate::collocation::CollocationModel;
use crate::error::{Error, Result};
use crate::imaging::{RelationGraph, RelationType};
use crate::lattice::{ImageId, Page};
use crate::parser::{select_by_parse, Grammar, SelectReport, TagLexicon};
use crate::relaxation::{self, RelaxParams};

/// Score bonus given to a cluster's winner above the member's set maximum.
pub const CONSENSUS_BONUS: f64 = 0.01;

/// String-level counterpart of a visual relation type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolicRelation {
    pub rel_type: RelationType,
    /// Minimum shared prefix, suffix or overlap length in characters.
    pub min_len: usize,
}

impl SymbolicRelation {
    pub fn new(rel_type: RelationType, min_len: usize) -> Result<Self> {
        if min_len == 0 {
            return Err(Error::validation("minimum relation length must be at least 1"));
        }
        Ok(SymbolicRelation { rel_type, min_len })
    }
}

/// Whether `w1` and `w2` satisfy `rel` as strings (character-wise).
pub fn symbolic_relation_holds(w1: &str, w2: &str, rel: &SymbolicRelation) -> bool {
    let a: Vec<char> = w1.chars().collect();
    let b: Vec<char> = w2.chars().collect();
    let l = rel.min_len;
    match rel.rel_type {
        RelationType::Same => a == b,
        RelationType::Subimage => {
            a.len() < b.len() && !a.is_empty() && b.windows(a.len()).any(|w| w == a.as_slice())
        }
        RelationType::SharedLeft => a.iter().zip(&b).take_while(|(x, y)| x == y).count() >= l,
        RelationType::SharedRight => {
            a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count() >= l
        }
        RelationType::RightLeft => {
            (l..=a.len().min(b.len())).any(|k| a[a.len() - k..] == b[..k])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintParams {
    /// Multiplier applied to both top1 scores of a consistent pair.
    pub boost: f64,
    /// Confidence gap needed before the weaker image follows the stronger.
    pub follow_gap: f64,
    /// Minimum shared length for relation types 3-5.
    pub min_len: usize,
}

impl Default for ConstraintParams {
    fn default() -> Self {
        ConstraintParams {
            boost: 1.5,
            follow_gap: 0.2,
            min_len: 2,
        }
    }
}

impl ConstraintParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.boost >= 1.0) || !self.boost.is_finite() {
            return Err(Error::validation(format!("boost {} must be at least 1", self.boost)));
        }
        if !(0.0..=1.0).contains(&self.follow_gap) {
            return Err(Error::validation(format!(
                "follow gap {} outside [0,1]",
                self.follow_gap
            )));
        }
        if self.min_len == 0 {
            return Err(Error::validation("min_len must be at least 1"));
        }
        Ok(())
    }

    fn relation(&self, t: RelationType) -> SymbolicRelation {
        SymbolicRelation {
            rel_type: t,
            min_len: self.min_len,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Boosted,
    Followed,
    Skipped,
    NoCandidate,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Boosted => "boosted",
            Action::Followed => "followed",
            Action::Skipped => "skipped",
            Action::NoCandidate => "no-candidate",
        })
    }
}

/// What enforcement did with one edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeAction {
    pub a: ImageId,
    pub b: ImageId,
    pub rel_type: RelationType,
    pub action: Action,
}

impl fmt::Display for EdgeAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "edge {} {} {} {}", self.a, self.b, self.rel_type, self.action)
    }
}

/// Diagnostics dump: one `edge a b type action` line per edge.
pub fn write_actions<W: Write>(actions: &[EdgeAction], mut out: W) -> Result<()> {
    for a in actions {
        writeln!(out, "{a}")?;
    }
    Ok(())
}

fn locate(
    index: &HashMap<ImageId, (usize, usize)>,
    id: ImageId,
) -> Result<(usize, usize)> {
    index
        .get(&id)
        .copied()
        .ok_or_else(|| Error::validation(format!("relation graph names image {id}, which is not on the page")))
}

/// One pass over the graph's edges in (a, b, type) order.
pub fn enforce(
    page: &Page,
    graph: &RelationGraph,
    params: &ConstraintParams,
) -> Result<(Page, Vec<EdgeAction>)> {
    params.validate()?;
    let index = page.locate_all();
    let mut out = page.clone();
    let mut actions = Vec::with_capacity(graph.edges.len());
    let mut edges: Vec<_> = graph.edges.iter().collect();
    if !edges.is_sorted_by_key(|e| (e.a, e.b, e.rel_type)) {
        edges.sort_by_key(|e| (e.a, e.b, e.rel_type));
    }
    for e in edges {
        let pa = locate(&index, e.a)?;
        let pb = locate(&index, e.b)?;
        let rel = params.relation(e.rel_type);
        let (holds, sa, sb) = {
            let (ta, tb) = (out.set_at(pa).top1(), out.set_at(pb).top1());
            (symbolic_relation_holds(&ta.word, &tb.word, &rel), ta.score, tb.score)
        };
        let action = if holds {
            out.set_at_mut(pa).scale_top1(params.boost)?;
            out.set_at_mut(pb).scale_top1(params.boost)?;
            Action::Boosted
        } else if e.rel_type != RelationType::Same || (sa - sb).abs() < params.follow_gap {
            // partial relations only boost; close calls are left alone
            Action::Skipped
        } else {
            let (leader, follower) = if sa > sb { (pa, pb) } else { (pb, pa) };
            let lead = out.set_at(leader).top1().clone();
            let pick = out
                .set_at(follower)
                .candidates()
                .iter()
                .find(|c| symbolic_relation_holds(&c.word, &lead.word, &rel))
                .map(|c| c.word.clone());
            match pick {
                Some(w) => {
                    out.set_at_mut(follower).assign_and_normalize(&w, lead.score)?;
                    Action::Followed
                }
                None => Action::NoCandidate,
            }
        };
        actions.push(EdgeAction {
            a: e.a,
            b: e.b,
            rel_type: e.rel_type,
            action,
        });
    }
    Ok((out, actions))
}

/// Confidence-weighted vote over the top1 words of a cluster's members.
/// Ties go to the lexicographically smaller word.
pub fn cluster_winner(page: &Page, cluster: &[ImageId]) -> Result<Option<String>> {
    winner_with(page, &page.locate_all(), cluster)
}

fn winner_with(page: &Page, index: &HashMap<ImageId, (usize, usize)>, cluster: &[ImageId]) -> Result<Option<String>> {
    let mut weight: BTreeMap<&str, f64> = BTreeMap::new();
    for &id in cluster {
        let top = page.set_at(locate(index, id)?).top1();
        *weight.entry(top.word.as_str()).or_insert(0.0) += top.score;
    }
    let mut best: Option<(&str, f64)> = None;
    for (w, s) in weight {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((w, s));
        }
    }
    Ok(best.map(|(w, _)| w.to_string()))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConsensusReport {
    /// Winner per cluster of two or more images, in cluster order.
    pub winners: Vec<(Vec<ImageId>, String)>,
    /// Members whose candidate sets lack their cluster's winner.
    pub consensus_misses: usize,
}

/// Each multi-image cluster votes on one identity, which every member that
/// has it as a candidate promotes to its top.
pub fn cluster_consensus(page: &Page, clusters: &[Vec<ImageId>]) -> Result<(Page, ConsensusReport)> {
    let index = page.locate_all();
    let mut out = page.clone();
    let mut report = ConsensusReport::default();
    // singletons would only risk reordering exact ties
    for cluster in clusters.iter().filter(|c| c.len() > 1) {
        let Some(winner) = winner_with(&out, &index, cluster)? else {
            continue;
        };
        for &id in cluster {
            let set = out.set_at_mut(locate(&index, id)?);
            if set.contains(&winner) {
                set.promote(&winner, CONSENSUS_BONUS)?;
            } else {
                report.consensus_misses += 1;
            }
        }
        report.winners.push((cluster.clone(), winner));
    }
    Ok((out, report))
}

/// Members that contain their cluster's current winner but do not decide it.
pub fn consensus_violations(page: &Page, clusters: &[Vec<ImageId>]) -> Result<Vec<ImageId>> {
    let index = page.locate_all();
    let mut bad = Vec::new();
    for cluster in clusters.iter().filter(|c| c.len() > 1) {
        let Some(winner) = winner_with(page, &index, cluster)? else {
            continue;
        };
        for &id in cluster {
            let set = page.set_at(locate(&index, id)?);
            if set.contains(&winner) && set.top1().word != winner {
                bad.push(id);
            }
        }
    }
    Ok(bad)
}

/// Outcome of [`integrate`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegrateReport {
    /// Relaxation rounds run before pruning.
    pub rounds: usize,
    /// Whether every sentence had settled when relaxation stopped.
    pub converged: bool,
    pub parse: SelectReport,
    /// Edge actions of the final enforcement pass.
    pub actions: Vec<EdgeAction>,
    pub consensus: ConsensusReport,
}

/// Relaxation interleaved with constraint enforcement, then pruning, parse
/// selection and a final enforcement and consensus pass.
///
/// Each round steps every unsettled sentence once, then applies
/// [`enforce`] and [`cluster_consensus`] to the whole page. A sentence settles
/// when its step changes no score by `epsilon` or more, and wakes up again
/// when a constraint pass touches it. With an empty graph this reduces
/// exactly to relax, prune, then parse.
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    page: &Page,
    model: &CollocationModel,
    graph: &RelationGraph,
    relax: &RelaxParams,
    params: &ConstraintParams,
    grammar: &Grammar,
    tags: &TagLexicon,
) -> Result<(Page, IntegrateReport)> {
    params.validate()?;
    let mut cur = page.clone();
    let n = cur.sentences().len();
    let mut active = vec![true; n];
    let mut rounds = 0;
    let single_step = RelaxParams {
        max_iters: 1,
        ..*relax
    };
    while rounds < relax.max_iters && active.iter().any(|&a| a) {
        rounds += 1;
        let runs = relaxation::relax_sentences(&mut cur, page, model, &single_step, &active)?;
        for (a, run) in active.iter_mut().zip(&runs) {
            if let Some(run) = run {
                *a = !run.converged;
            }
        }
        let before = cur.clone();
        let (enforced, _) = enforce(&cur, graph, params)?;
        let (voted, _) = cluster_consensus(&enforced, &graph.type1_clusters)?;
        cur = voted;
        for (i, (old, new)) in before.sentences().iter().zip(cur.sentences()).enumerate() {
            if old != new {
                active[i] = true;
            }
        }
    }
    let converged = !active.iter().any(|&a| a);
    let pruned = relaxation::prune(&cur, relax)?;
    let (parsed, parse) = select_by_parse(&pruned, grammar, tags, relax.execution)?;
    let (enforced, actions) = enforce(&parsed, graph, params)?;
    let (fin, consensus) = cluster_consensus(&enforced, &graph.type1_clusters)?;
    Ok((
        fin,
        IntegrateReport {
            rounds,
            converged,
            parse,
            actions,
            consensus,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::RelationEdge;
    use crate::lattice::{make_candidate_set, SentenceLattice};

    fn rel(t: RelationType, l: usize) -> SymbolicRelation {
        SymbolicRelation::new(t, l).unwrap()
    }

    #[test]
    fn symbolic_examples() {
        use RelationType::*;
        assert!(symbolic_relation_holds("form", "form", &rel(Same, 2)));
        assert!(!symbolic_relation_holds("form", "farm", &rel(Same, 2)));
        assert!(symbolic_relation_holds("is", "This", &rel(Subimage, 2)));
        assert!(!symbolic_relation_holds("This", "This", &rel(Subimage, 2)));
        assert!(symbolic_relation_holds("fill", "till", &rel(SharedRight, 3)));
        assert!(!symbolic_relation_holds("fill", "till", &rel(SharedRight, 4)));
        assert!(symbolic_relation_holds("fill", "filling", &rel(SharedLeft, 2)));
        assert!(symbolic_relation_holds("visual", "algorithm", &rel(RightLeft, 2)));
        assert!(!symbolic_relation_holds("algorithm", "visual", &rel(RightLeft, 2)));
        assert!(SymbolicRelation::new(Same, 0).is_err());
    }

    fn page(cols: &[&[&[(&str, f64)]]]) -> Page {
        let mut id = 0;
        let sentences = cols
            .iter()
            .map(|s| {
                let sets = s
                    .iter()
                    .map(|c| {
                        id += 1;
                        make_candidate_set(ImageId(id), c.iter().copied()).unwrap()
                    })
                    .collect();
                SentenceLattice::new(sets).unwrap()
            })
            .collect();
        Page::new(sentences).unwrap()
    }

    fn same(a: u32, b: u32) -> RelationEdge {
        RelationEdge {
            a: ImageId(a),
            b: ImageId(b),
            rel_type: RelationType::Same,
            score: 1.0,
            offset: (0, 0),
            part_width: None,
        }
    }

    fn graph(p: &Page, edges: Vec<RelationEdge>) -> RelationGraph {
        RelationGraph::from_edges(p.sets().map(|s| s.image_id()), edges)
    }

    #[test]
    fn consistent_pair_is_boosted() {
        let p = page(&[&[&[("form", 0.6), ("farm", 0.4)]], &[&[("form", 0.55), ("foam", 0.45)]]]);
        let (out, actions) = enforce(&p, &graph(&p, vec![same(1, 2)]), &ConstraintParams::default()).unwrap();
        assert_eq!(actions[0].action, Action::Boosted);
        assert_eq!(actions[0].to_string(), "edge 1 2 1 boosted");
        assert!(out.set_at((0, 0)).top1().score > 0.6);
        assert!(out.set_at((1, 0)).top1().score > 0.55);
        assert_eq!(out.set_at((1, 0)).top1().word, "form");
    }

    #[test]
    fn weak_image_follows_strong_one() {
        // image 2 is the strong "form"; image 1 prefers "fill" but lists "form"
        let p = page(&[
            &[&[("fill", 0.5), ("form", 0.3), ("farm", 0.2)]],
            &[&[("form", 0.9), ("farm", 0.1)]],
        ]);
        let (out, actions) = enforce(&p, &graph(&p, vec![same(1, 2)]), &ConstraintParams::default()).unwrap();
        assert_eq!(actions[0].action, Action::Followed);
        assert_eq!(out.set_at((0, 0)).top1().word, "form");
        assert_eq!(out.set_at((1, 0)), p.set_at((1, 0)));
    }

    #[test]
    fn no_action_branches() {
        let close = page(&[&[&[("fill", 0.5), ("till", 0.5)]], &[&[("form", 0.6), ("farm", 0.4)]]]);
        let (out, actions) = enforce(&close, &graph(&close, vec![same(1, 2)]), &ConstraintParams::default()).unwrap();
        assert_eq!((out, actions[0].action), (close.clone(), Action::Skipped));
        let missing = page(&[&[&[("fill", 0.3), ("till", 0.7)]], &[&[("form", 0.95), ("farm", 0.05)]]]);
        let (out, actions) = enforce(&missing, &graph(&missing, vec![same(1, 2)]), &ConstraintParams::default()).unwrap();
        assert_eq!((out, actions[0].action), (missing.clone(), Action::NoCandidate));
        let dangling = graph(&missing, vec![same(1, 9)]);
        assert!(enforce(&missing, &dangling, &ConstraintParams::default()).is_err());
    }

    #[test]
    fn cluster_vote() {
        let p = page(&[&[
            &[("form", 0.6), ("farm", 0.4)],
            &[("farm", 0.35), ("form", 0.33), ("foam", 0.32)],
            &[("form", 0.55), ("forth", 0.45)],
            &[("fill", 0.9), ("till", 0.1)],
        ]]);
        let clusters = vec![vec![ImageId(1), ImageId(2), ImageId(3)], vec![ImageId(4)]];
        assert_eq!(cluster_winner(&p, &clusters[0]).unwrap().as_deref(), Some("form"));
        let (out, rep) = cluster_consensus(&p, &clusters).unwrap();
        assert_eq!(out.set_at((0, 1)).top1().word, "form");
        assert_eq!(rep.consensus_misses, 0);
        assert_eq!(rep.winners.len(), 1);
        assert!(consensus_violations(&out, &clusters).unwrap().is_empty());
        assert_eq!(consensus_violations(&p, &clusters).unwrap(), vec![ImageId(2)]);
        // agreeing clusters and singletons stay put
        let (again, _) = cluster_consensus(&out, &clusters).unwrap();
        assert_eq!(again, out);
        assert_eq!(out.set_at((0, 3)), p.set_at((0, 3)));
    }

    #[test]
    fn members_without_the_winner_are_counted() {
        let p = page(&[&[&[("form", 0.9), ("farm", 0.1)], &[("fill", 0.8), ("till", 0.2)]]]);
        let (out, rep) = cluster_consensus(&p, &[vec![ImageId(1), ImageId(2)]]).unwrap();
        assert_eq!(rep.consensus_misses, 1);
        assert_eq!(out, p);
    }
}
