//! Visual inter-word relations between word images, and type-1 clustering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::iter::Peekable;

use super::{best_alignment, subimage_similarity, Bitmap};
use crate::error::{Error, Result};
use crate::lattice::ImageId;
use crate::par::{self, Execution};

/// Kinds of image-level relation between word images W1 and W2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationType {
    /// W1 ≈ W2
    Same = 1,
    /// W1 ≈ a subimage of W2
    Subimage = 2,
    /// left part of W1 ≈ left part of W2
    SharedLeft = 3,
    /// right part of W1 ≈ right part of W2
    SharedRight = 4,
    /// right part of W1 ≈ left part of W2
    RightLeft = 5,
}

impl RelationType {
    pub const ALL: [RelationType; 5] = [
        RelationType::Same,
        RelationType::Subimage,
        RelationType::SharedLeft,
        RelationType::SharedRight,
        RelationType::RightLeft,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Result<Self> {
        RelationType::ALL
            .get((n as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::validation(format!("relation type {n} outside 1..=5")))
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationEdge {
    pub a: ImageId,
    pub b: ImageId,
    pub rel_type: RelationType,
    pub score: f64,
    /// Alignment at which the match was found.
    pub offset: (i32, i32),
    /// Matched part width in pixels (types 3-5).
    pub part_width: Option<usize>,
}

/// Matching thresholds and the relation types to look for.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchConfig {
    pub tau_same: f64,
    pub tau_sub: f64,
    pub tau_part: f64,
    /// Minimum part width for types 3-5, in pixels.
    pub min_part_width: usize,
    /// Type-1 candidates whose widths differ by more than this are skipped.
    pub max_width_diff: usize,
    pub types: Vec<RelationType>,
    pub execution: Execution,
}

impl MatchConfig {
    pub const TAU_SAME_CLEAN: f64 = 0.95;
    pub const TAU_SAME_NOISY: f64 = 0.85;

    /// Thresholds for clean renders.
    pub fn clean() -> Self {
        MatchConfig {
            tau_same: Self::TAU_SAME_CLEAN,
            tau_sub: 0.9,
            tau_part: 0.9,
            min_part_width: 11,
            max_width_diff: 4,
            types: RelationType::ALL.to_vec(),
            execution: Execution::default(),
        }
    }

    /// Thresholds for degraded images.
    pub fn noisy() -> Self {
        MatchConfig {
            tau_same: Self::TAU_SAME_NOISY,
            ..Self::clean()
        }
    }

    pub fn with_types(mut self, types: &[RelationType]) -> Self {
        self.types = types.to_vec();
        self
    }

    fn wants(&self, t: RelationType) -> bool {
        self.types.contains(&t)
    }
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::clean()
    }
}

/// Typed edges between word images plus the type-1 clusters they induce.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelationGraph {
    pub nodes: Vec<ImageId>,
    pub edges: Vec<RelationEdge>,
    pub type1_clusters: Vec<Vec<ImageId>>,
}

impl RelationGraph {
    /// A graph with nodes only; every node is its own cluster.
    pub fn unlinked(nodes: impl IntoIterator<Item = ImageId>) -> Self {
        let mut g = RelationGraph {
            nodes: nodes.into_iter().collect(),
            ..Default::default()
        };
        g.nodes.sort_unstable();
        g.nodes.dedup();
        g.type1_clusters = cluster_type1(&g);
        g
    }

    /// Builds a graph from explicit edges and recomputes the clusters.
    pub fn from_edges(nodes: impl IntoIterator<Item = ImageId>, mut edges: Vec<RelationEdge>) -> Self {
        let mut g = RelationGraph::unlinked(nodes);
        edges.sort_by_key(|x| (x.a, x.b, x.rel_type));
        g.edges = edges;
        g.type1_clusters = cluster_type1(&g);
        g
    }

    pub fn edges_of_type(&self, t: RelationType) -> impl Iterator<Item = &RelationEdge> {
        self.edges.iter().filter(move |e| e.rel_type == t)
    }

    fn type1_neighbors(&self) -> HashSet<(ImageId, ImageId)> {
        self.edges_of_type(RelationType::Same)
            .flat_map(|e| [(e.a, e.b), (e.b, e.a)])
            .collect()
    }

    /// Clusters of two or more images.
    pub fn nontrivial_clusters(&self) -> impl Iterator<Item = &Vec<ImageId>> {
        self.type1_clusters.iter().filter(|c| c.len() > 1)
    }

    /// True when every pair inside every cluster holds a type-1 edge.
    pub fn clusters_are_cliques(&self) -> bool {
        let adj = self.type1_neighbors();
        self.type1_clusters.iter().all(|c| {
            c.iter()
                .enumerate()
                .all(|(i, a)| c[i + 1..].iter().all(|b| adj.contains(&(*a, *b))))
        })
    }
}

/// Best-matching part width in `[min_w, max_w]`; ties go to the wider part.
fn best_part(
    a: &Bitmap,
    b: &Bitmap,
    a_right: bool,
    b_right: bool,
    min_w: usize,
    max_w: usize,
    tau: f64,
) -> Option<(usize, f64, (i32, i32))> {
    let mut best: Option<(usize, f64, (i32, i32))> = None;
    for w in (min_w..=max_w).rev() {
        let ca = a
            .crop_columns(if a_right { a.width() - w } else { 0 }, w)
            .ok()?;
        let cb = b
            .crop_columns(if b_right { b.width() - w } else { 0 }, w)
            .ok()?;
        let (s, off) = best_alignment(&ca, &cb);
        if s >= tau && best.is_none_or(|(_, bs, _)| s > bs) {
            best = Some((w, s, off));
            if s == 1.0 {
                break;
            }
        }
    }
    best
}

/// Highest-priority relation between two images, if any clears its threshold.
fn relate(ia: ImageId, a: &Bitmap, ib: ImageId, b: &Bitmap, cfg: &MatchConfig) -> Option<RelationEdge> {
    let edge = |a, b, rel_type, score, offset, part_width| RelationEdge {
        a,
        b,
        rel_type,
        score,
        offset,
        part_width,
    };
    if cfg.wants(RelationType::Same) && a.width().abs_diff(b.width()) <= cfg.max_width_diff {
        let (s, off) = best_alignment(a, b);
        if s >= cfg.tau_same {
            return Some(edge(ia, ib, RelationType::Same, s, off, None));
        }
    }
    if cfg.wants(RelationType::Subimage) && a.width() != b.width() {
        let ((si, small), (bi, big)) = if a.width() < b.width() {
            ((ia, a), (ib, b))
        } else {
            ((ib, b), (ia, a))
        };
        if let Ok((off, s)) = subimage_similarity(small, big) {
            if s >= cfg.tau_sub {
                return Some(edge(si, bi, RelationType::Subimage, s, off, None));
            }
        }
    }
    let max_w = a.width().min(b.width());
    // full-width parts of equal-width images are the type-1 comparison
    let part_max = if a.width() == b.width() { max_w - 1 } else { max_w };
    if part_max < cfg.min_part_width {
        return None;
    }
    let mut best: Option<RelationEdge> = None;
    let mut consider = |cand: RelationEdge| {
        let better = match &best {
            None => true,
            Some(cur) => cand.score > cur.score,
        };
        if better {
            best = Some(cand);
        }
    };
    let min_w = cfg.min_part_width;
    let tau = cfg.tau_part;
    if cfg.wants(RelationType::SharedLeft) {
        if let Some((w, s, off)) = best_part(a, b, false, false, min_w, part_max, tau) {
            consider(edge(ia, ib, RelationType::SharedLeft, s, off, Some(w)));
        }
    }
    if cfg.wants(RelationType::SharedRight) {
        if let Some((w, s, off)) = best_part(a, b, true, true, min_w, part_max, tau) {
            consider(edge(ia, ib, RelationType::SharedRight, s, off, Some(w)));
        }
    }
    if cfg.wants(RelationType::RightLeft) {
        if let Some((w, s, off)) = best_part(a, b, true, false, min_w, part_max, tau) {
            consider(edge(ia, ib, RelationType::RightLeft, s, off, Some(w)));
        }
        if let Some((w, s, off)) = best_part(b, a, true, false, min_w, part_max, tau) {
            consider(edge(ib, ia, RelationType::RightLeft, s, off, Some(w)));
        }
    }
    best
}

/// Compares every unordered pair of images and keeps the highest-priority
/// relation per pair (type 1 before 2 before 3/4/5).
///
/// Pixel-identical images are compared once: the relation between two images
/// depends only on their bitmaps and argument order, so each pair of distinct
/// bitmaps is matched in both orders and the result replicated.
pub fn detect_relations(bitmaps: &BTreeMap<ImageId, Bitmap>, cfg: &MatchConfig) -> RelationGraph {
    let mut index: HashMap<&Bitmap, usize> = HashMap::new();
    let mut groups: Vec<(&Bitmap, Vec<ImageId>)> = Vec::new();
    for (id, bm) in bitmaps {
        let g = *index.entry(bm).or_insert_with(|| {
            groups.push((bm, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(*id);
    }
    let only_same = cfg.types == [RelationType::Same];
    let (first, second) = (ImageId(0), ImageId(1));
    let edges = par::flat_map_range(cfg.execution, groups.len(), |gi| {
        let (a, ids_a) = &groups[gi];
        let mut out = Vec::new();
        for (b, ids_b) in &groups[gi..] {
            if only_same && a.width().abs_diff(b.width()) > cfg.max_width_diff {
                continue;
            }
            let fwd = relate(first, a, second, b, cfg);
            let bwd = if std::ptr::eq(*a, *b) { fwd.clone() } else { relate(first, b, second, a, cfg) };
            for &ma in ids_a {
                for &mb in ids_b.iter().filter(|&&mb| mb != ma) {
                    let (lo, hi, rel) = if ma < mb { (ma, mb, &fwd) } else { (mb, ma, &bwd) };
                    if std::ptr::eq(*a, *b) && ma > mb {
                        continue;
                    }
                    if let Some(e) = rel {
                        let map = |id: ImageId| if id == first { lo } else { hi };
                        out.push(RelationEdge {
                            a: map(e.a),
                            b: map(e.b),
                            ..e.clone()
                        });
                    }
                }
            }
        }
        out
    });
    RelationGraph::from_edges(bitmaps.keys().copied(), edges)
}

/// Greedy complete-linkage clustering over type-1 edges: scanning ids in
/// ascending order, each unassigned id seeds a cluster and absorbs every later
/// unassigned id adjacent to all current members.
pub fn cluster_type1(graph: &RelationGraph) -> Vec<Vec<ImageId>> {
    let adj = graph.type1_neighbors();
    let mut neighbors: BTreeMap<ImageId, Vec<ImageId>> = BTreeMap::new();
    for &(a, b) in &adj {
        neighbors.entry(a).or_default().push(b);
    }
    for list in neighbors.values_mut() {
        list.sort_unstable();
    }
    let mut nodes = graph.nodes.clone();
    nodes.extend(neighbors.keys().copied());
    nodes.sort_unstable();
    nodes.dedup();

    let mut assigned = HashSet::new();
    let mut clusters = Vec::new();
    for &seed in &nodes {
        if !assigned.insert(seed) {
            continue;
        }
        let mut cluster = vec![seed];
        if let Some(cands) = neighbors.get(&seed) {
            for &c in cands.iter().filter(|&&c| c > seed) {
                if assigned.contains(&c) {
                    continue;
                }
                if cluster.iter().all(|m| adj.contains(&(*m, c))) {
                    cluster.push(c);
                    assigned.insert(c);
                }
            }
        }
        clusters.push(cluster);
    }
    clusters
}

/// Relation dump: `a TAB b TAB type TAB score TAB dx TAB dy` per edge.
pub fn write_graph<W: Write>(graph: &RelationGraph, mut out: W) -> Result<()> {
    for e in &graph.edges {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{}\t{}",
            e.a, e.b, e.rel_type, e.score, e.offset.0, e.offset.1
        )?;
    }
    Ok(())
}

/// Writes several P1 images, each preceded by a `# image <id>` comment.
pub fn write_pbm_set<W: Write>(bitmaps: &BTreeMap<ImageId, Bitmap>, mut out: W) -> Result<()> {
    for (id, bm) in bitmaps {
        writeln!(out, "# image {id}")?;
        super::write_pbm(bm, &mut out)?;
    }
    Ok(())
}

pub(crate) fn parse_pbm_tokens<I: Iterator<Item = (usize, String)>>(
    tokens: &mut Peekable<I>,
) -> Result<Bitmap> {
    let (line, magic) = tokens
        .next()
        .ok_or_else(|| Error::parse(0, "missing PBM header"))?;
    if magic != "P1" {
        return Err(Error::parse(line, format!("expected P1, found '{magic}'")));
    }
    let mut dim = || -> Result<usize> {
        let (line, t) = tokens.next().ok_or_else(|| Error::parse(line, "missing dimension"))?;
        t.parse().map_err(|_| Error::parse(line, format!("bad dimension '{t}'")))
    };
    let w = dim()?;
    let h = dim()?;
    let mut bits = Vec::with_capacity(w * h);
    while bits.len() < w * h {
        let (line, t) = tokens
            .next()
            .ok_or_else(|| Error::parse(line, "truncated pixel data"))?;
        // P1 allows pixels to run together without separators
        for c in t.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return Err(Error::parse(line, format!("bad pixel '{c}'"))),
            }
        }
    }
    if bits.len() != w * h {
        return Err(Error::parse(line, "pixel count does not match dimensions"));
    }
    Bitmap::from_bits(w, h, &bits).map_err(|e| Error::parse(line, e.to_string()))
}

/// Reads a file written by [`write_pbm_set`].
pub fn read_pbm_set<R: BufRead>(input: R) -> Result<BTreeMap<ImageId, Bitmap>> {
    let mut out = BTreeMap::new();
    let mut pending: Option<(usize, ImageId)> = None;
    let mut tokens: Vec<(usize, String)> = Vec::new();
    let mut flush = |pending: Option<(usize, ImageId)>, tokens: &mut Vec<(usize, String)>| -> Result<()> {
        if let Some((line, id)) = pending {
            let mut it = std::mem::take(tokens).into_iter().peekable();
            let bm = parse_pbm_tokens(&mut it)?;
            if it.next().is_some() {
                return Err(Error::parse(line, format!("trailing data after image {id}")));
            }
            if out.insert(id, bm).is_some() {
                return Err(Error::parse(line, format!("image {id} appears twice")));
            }
        } else if let Some((line, _)) = tokens.first() {
            return Err(Error::parse(*line, "pixel data before '# image <id>'"));
        }
        Ok(())
    };
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if let Some(rest) = line.trim().strip_prefix("# image ") {
            flush(pending.take(), &mut tokens)?;
            let id: u32 = rest
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad image id '{rest}'")))?;
            pending = Some((lineno, ImageId(id)));
            continue;
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(|t| (lineno, t.to_string())));
    }
    flush(pending, &mut tokens)?;
    Ok(out)
}
