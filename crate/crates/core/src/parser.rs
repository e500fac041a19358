//! Probabilistic CKY chart parsing over candidate lattices.
//!
//! Each lattice position contributes every (candidate, tag) pair as a leaf
//! weighted by `candidate score × P(tag | word)`. Grammars are in Chomsky
//! normal form with preterminal unaries: `A -> B C` over nonterminals or tags,
//! and `A -> Tag`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::lattice::{Page, SentenceLattice};
use crate::par::{self, Execution};

/// Per-LHS rule probabilities and per-word tag probabilities must sum to 1
/// within this tolerance.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Score bonus given to parse-selected candidates above their set's maximum.
pub const SELECT_BONUS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
struct BinaryRule {
    lhs: usize,
    left: usize,
    right: usize,
    logp: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct UnaryRule {
    lhs: usize,
    tag: usize,
    logp: f64,
}

/// A CNF grammar. Symbols `0..n_nonterminals` are nonterminals, the rest
/// are preterminal tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    n_nonterminals: usize,
    start: usize,
    binary: Vec<BinaryRule>,
    unary: Vec<UnaryRule>,
}

impl Grammar {
    /// Builds and validates a grammar. Nonterminals are the rule left-hand
    /// sides; every right-hand symbol must be a nonterminal or one of `tags`.
    pub fn new(
        start: &str,
        binary: &[(&str, &str, &str, f64)],
        unary: &[(&str, &str, f64)],
        tags: &[&str],
    ) -> Result<Self> {
        let mut symbols: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        fn add(s: &str, symbols: &mut Vec<String>, index: &mut HashMap<String, usize>) {
            index.entry(s.to_string()).or_insert_with(|| {
                symbols.push(s.to_string());
                symbols.len() - 1
            });
        }
        for (lhs, ..) in binary {
            add(lhs, &mut symbols, &mut index);
        }
        for (lhs, ..) in unary {
            add(lhs, &mut symbols, &mut index);
        }
        let n_nonterminals = symbols.len();
        for t in tags {
            if index.contains_key(*t) && index[*t] < n_nonterminals {
                return Err(Error::validation(format!(
                    "'{t}' is used both as a tag and as a rule left-hand side"
                )));
            }
            add(t, &mut symbols, &mut index);
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::validation(format!("unknown symbol '{s}'")))
        };
        let start = match index.get(start) {
            Some(&i) if i < n_nonterminals => i,
            _ => {
                return Err(Error::validation(format!(
                    "start symbol '{start}' has no rules"
                )))
            }
        };
        let mut mass = vec![0.0; n_nonterminals];
        let check_prob = |p: f64, what: &str| {
            if p > 0.0 && p <= 1.0 {
                Ok(())
            } else {
                Err(Error::validation(format!(
                    "rule {what} has probability {p} outside (0,1]"
                )))
            }
        };
        let mut brules = Vec::with_capacity(binary.len());
        for &(lhs, l, r, p) in binary {
            check_prob(p, &format!("{lhs} -> {l} {r}"))?;
            let rule = BinaryRule {
                lhs: lookup(lhs)?,
                left: lookup(l)?,
                right: lookup(r)?,
                logp: p.ln(),
            };
            mass[rule.lhs] += p;
            brules.push(rule);
        }
        let mut urules = Vec::with_capacity(unary.len());
        for &(lhs, t, p) in unary {
            check_prob(p, &format!("{lhs} -> {t}"))?;
            let tag = lookup(t)?;
            if tag < n_nonterminals {
                return Err(Error::validation(format!(
                    "unary rule {lhs} -> {t} rewrites to a nonterminal; only A -> Tag unaries are allowed in CNF"
                )));
            }
            let rule = UnaryRule {
                lhs: lookup(lhs)?,
                tag,
                logp: p.ln(),
            };
            mass[rule.lhs] += p;
            urules.push(rule);
        }
        for (i, m) in mass.iter().enumerate() {
            if (m - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::validation(format!(
                    "rules for '{}' sum to {m}, expected 1",
                    symbols[i]
                )));
            }
        }
        Ok(Grammar {
            symbols,
            index,
            n_nonterminals,
            start,
            binary: brules,
            unary: urules,
        })
    }

    pub fn start(&self) -> &str {
        &self.symbols[self.start]
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.symbols[..self.n_nonterminals]
    }

    pub fn tags(&self) -> &[String] {
        &self.symbols[self.n_nonterminals..]
    }

    pub fn rule_count(&self) -> usize {
        self.binary.len() + self.unary.len()
    }

    /// Probability of `lhs -> rhs`, where `rhs` has one or two symbols.
    pub fn rule_prob(&self, lhs: &str, rhs: &[&str]) -> f64 {
        let (Some(&a), Some(ids)) = (
            self.index.get(lhs),
            rhs.iter().map(|s| self.index.get(*s).copied()).collect::<Option<Vec<_>>>(),
        ) else {
            return 0.0;
        };
        let logp = match ids[..] {
            [t] => self
                .unary
                .iter()
                .find(|r| r.lhs == a && r.tag == t)
                .map(|r| r.logp),
            [l, r] => self
                .binary
                .iter()
                .find(|b| b.lhs == a && b.left == l && b.right == r)
                .map(|b| b.logp),
            _ => None,
        };
        logp.map_or(0.0, f64::exp)
    }

    fn symbol(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// P(tag | word), with a fallback distribution for words not listed.
#[derive(Clone, Debug, PartialEq)]
pub struct TagLexicon {
    entries: HashMap<String, Vec<(String, f64)>>,
    fallback: Vec<(String, f64)>,
}

impl TagLexicon {
    pub const DEFAULT_OPEN_CLASS: [&'static str; 3] = ["N", "V", "Adj"];

    /// `open` are the tags unknown words may take, uniformly.
    pub fn new<W: Into<String>>(
        entries: impl IntoIterator<Item = (W, Vec<(String, f64)>)>,
        open: &[&str],
    ) -> Result<Self> {
        if open.is_empty() {
            return Err(Error::validation("open-class tag list is empty"));
        }
        let mut map = HashMap::new();
        for (w, tags) in entries {
            let w = w.into();
            let sum: f64 = tags.iter().map(|(_, p)| p).sum();
            if tags.iter().any(|(_, p)| !(*p > 0.0 && *p <= 1.0))
                || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE
            {
                return Err(Error::validation(format!(
                    "tag probabilities for '{w}' must lie in (0,1] and sum to 1 (sum {sum})"
                )));
            }
            if map.insert(w.clone(), tags).is_some() {
                return Err(Error::validation(format!("word '{w}' listed twice")));
            }
        }
        let u = 1.0 / open.len() as f64;
        Ok(TagLexicon {
            entries: map,
            fallback: open.iter().map(|t| (t.to_string(), u)).collect(),
        })
    }

    /// Tag distribution of `word`. Unlisted words fall back to their lowercase
    /// form (sentence-initial capitals), then to the open-class distribution.
    pub fn tags(&self, word: &str) -> &[(String, f64)] {
        if let Some(t) = self.entries.get(word) {
            return t;
        }
        let lower = word.to_lowercase();
        self.entries.get(&lower).unwrap_or(&self.fallback)
    }

    pub fn prob(&self, word: &str, tag: &str) -> f64 {
        self.tags(word)
            .iter()
            .find(|(t, _)| t == tag)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn is_known(&self, word: &str) -> bool {
        self.entries.contains_key(word) || self.entries.contains_key(&word.to_lowercase())
    }

    /// Every tag mentioned by an entry or the fallback.
    pub fn tag_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .values()
            .chain(std::iter::once(&self.fallback))
            .flatten()
            .map(|(t, _)| t.clone())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads a grammar file.
///
/// ```text
/// %start S
/// %open N V Adj
/// S -> NP VP 1.0
/// NP -> N 1.0
/// form<TAB>N:0.9,V:0.1
/// ```
///
/// `%start` defaults to `S` and `%open` to `N V Adj`. Lines starting with
/// `#` are comments.
pub fn load_grammar<R: BufRead>(input: R) -> Result<(Grammar, TagLexicon)> {
    let mut start = "S".to_string();
    let mut open: Vec<String> = TagLexicon::DEFAULT_OPEN_CLASS.iter().map(|s| s.to_string()).collect();
    let mut binary: Vec<(String, String, String, f64)> = Vec::new();
    let mut unary: Vec<(String, String, f64)> = Vec::new();
    let mut entries: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    // first line where each symbol appears, for error messages
    let mut seen_at: HashMap<String, usize> = HashMap::new();

    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('%') {
            let mut parts = rest.split_whitespace();
            match parts.next() {
                Some("start") => {
                    start = parts
                        .next()
                        .ok_or_else(|| Error::parse(lineno, "%start needs a symbol"))?
                        .to_string();
                }
                Some("open") => {
                    open = parts.map(String::from).collect();
                    if open.is_empty() {
                        return Err(Error::parse(lineno, "%open needs at least one tag"));
                    }
                }
                other => {
                    return Err(Error::parse(
                        lineno,
                        format!("unknown directive %{}", other.unwrap_or("")),
                    ))
                }
            }
            continue;
        }
        if let Some((word, tags)) = line.split_once('\t') {
            let word = word.trim();
            if word.is_empty() {
                return Err(Error::parse(lineno, "empty word in lexicon line"));
            }
            let mut dist = Vec::new();
            for item in tags.split(',') {
                let (tag, p) = item
                    .trim()
                    .rsplit_once(':')
                    .ok_or_else(|| Error::parse(lineno, format!("expected tag:prob, found '{item}'")))?;
                let p: f64 = p
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad probability '{p}'")))?;
                seen_at.entry(tag.to_string()).or_insert(lineno);
                dist.push((tag.to_string(), p));
            }
            if entries.insert(word.to_string(), dist).is_some() {
                return Err(Error::parse(lineno, format!("word '{word}' listed twice")));
            }
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() < 4 || tokens[1] != "->" {
            return Err(Error::parse(
                lineno,
                "expected 'A -> B C prob', 'A -> Tag prob' or 'word<TAB>tag:prob,...'",
            ));
        }
        let p: f64 = tokens[tokens.len() - 1]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad probability '{}'", tokens[tokens.len() - 1])))?;
        let rhs = &tokens[2..tokens.len() - 1];
        for s in std::iter::once(&tokens[0]).chain(rhs) {
            seen_at.entry(s.to_string()).or_insert(lineno);
        }
        match rhs {
            [t] => unary.push((tokens[0].into(), t.to_string(), p)),
            [l, r] => binary.push((tokens[0].into(), l.to_string(), r.to_string(), p)),
            _ => {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "rule with {} right-hand symbols is not in Chomsky normal form; binarize it with intermediate nonterminals",
                        rhs.len()
                    ),
                ))
            }
        }
    }

    let open_refs: Vec<&str> = open.iter().map(String::as_str).collect();
    let lexicon = TagLexicon::new(entries, &open_refs)?;
    let tags = lexicon.tag_names();
    let tag_refs: Vec<&str> = tags.iter().map(String::as_str).collect();
    let b: Vec<(&str, &str, &str, f64)> = binary
        .iter()
        .map(|(a, l, r, p)| (a.as_str(), l.as_str(), r.as_str(), *p))
        .collect();
    let u: Vec<(&str, &str, f64)> = unary.iter().map(|(a, t, p)| (a.as_str(), t.as_str(), *p)).collect();
    let grammar = Grammar::new(&start, &b, &u, &tag_refs).map_err(|e| match e {
        // point unknown symbols at the line that introduced them
        Error::Validation(msg) => {
            let line = seen_at
                .iter()
                .filter(|(sym, _)| msg.contains(&format!("'{sym}'")))
                .map(|(_, l)| *l)
                .min()
                .unwrap_or(0);
            Error::parse(line, msg)
        }
        other => other,
    })?;
    Ok((grammar, lexicon))
}

/// A derivation over a lattice.
#[derive(Clone, Debug, PartialEq)]
pub enum ParseTree {
    Leaf {
        tag: String,
        pos: usize,
        word: String,
    },
    Unary {
        label: String,
        child: Box<ParseTree>,
    },
    Binary {
        label: String,
        left: Box<ParseTree>,
        right: Box<ParseTree>,
    },
}

impl ParseTree {
    pub fn label(&self) -> &str {
        match self {
            ParseTree::Leaf { tag, .. } => tag,
            ParseTree::Unary { label, .. } | ParseTree::Binary { label, .. } => label,
        }
    }

    /// Leaves as (position, word, tag), left to right.
    pub fn leaves(&self) -> Vec<(usize, &str, &str)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(usize, &'a str, &'a str)>) {
        match self {
            ParseTree::Leaf { tag, pos, word } => out.push((*pos, word, tag)),
            ParseTree::Unary { child, .. } => child.collect_leaves(out),
            ParseTree::Binary { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Log probability of this derivation: rule probabilities, tag
    /// probabilities and candidate scores.
    pub fn log_score(&self, g: &Grammar, tl: &TagLexicon, sentence: &SentenceLattice) -> f64 {
        match self {
            ParseTree::Leaf { tag, pos, word } => {
                let score = sentence
                    .positions()
                    .get(*pos)
                    .and_then(|s| s.score_of(word))
                    .unwrap_or(0.0);
                score.ln() + tl.prob(word, tag).ln()
            }
            ParseTree::Unary { label, child } => {
                g.rule_prob(label, &[child.label()]).ln() + child.log_score(g, tl, sentence)
            }
            ParseTree::Binary { label, left, right } => {
                g.rule_prob(label, &[left.label(), right.label()]).ln()
                    + left.log_score(g, tl, sentence)
                    + right.log_score(g, tl, sentence)
            }
        }
    }
}

impl fmt::Display for ParseTree {
    /// Bracketed form, e.g. `(S (NP (Det the) (N form)) (Punc .))`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseTree::Leaf { tag, word, .. } => write!(f, "({tag} {word})"),
            ParseTree::Unary { label, child } => write!(f, "({label} {child})"),
            ParseTree::Binary { label, left, right } => write!(f, "({label} {left} {right})"),
        }
    }
}

/// Outcome of parsing one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseResult {
    /// Candidate chosen at each position by the Viterbi tree; empty when
    /// the sentence has no parse.
    pub selections: Vec<String>,
    pub tree: Option<ParseTree>,
    /// Natural-log Viterbi score; `-inf` when unparsed.
    pub log_score: f64,
}

impl ParseResult {
    pub fn is_parsed(&self) -> bool {
        self.tree.is_some()
    }
}

#[derive(Clone, Copy, Debug)]
enum Back {
    Leaf { cand: usize },
    Unary { tag: usize },
    Binary { rule: usize, split: usize },
}

/// CKY chart: for each span `(i, j)` and symbol, the best log score with its
/// backpointer and the log inside score.
struct Chart {
    n: usize,
    n_symbols: usize,
    viterbi: Vec<f64>,
    inside: Vec<f64>,
    back: Vec<Option<Back>>,
}

impl Chart {
    fn idx(&self, i: usize, j: usize, sym: usize) -> usize {
        (i * (self.n + 1) + j) * self.n_symbols + sym
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn fill_chart(sentence: &SentenceLattice, g: &Grammar, tl: &TagLexicon) -> Chart {
    let n = sentence.len();
    let ns = g.symbols.len();
    let size = (n + 1) * (n + 1) * ns;
    let mut c = Chart {
        n,
        n_symbols: ns,
        viterbi: vec![f64::NEG_INFINITY; size],
        inside: vec![f64::NEG_INFINITY; size],
        back: vec![None; size],
    };
    for (i, set) in sentence.positions().iter().enumerate() {
        for (ci, cand) in set.candidates().iter().enumerate() {
            if !(cand.score > 0.0) {
                continue;
            }
            for (tag, p) in tl.tags(&cand.word) {
                let Some(t) = g.symbol(tag).filter(|&t| t >= g.n_nonterminals) else {
                    continue;
                };
                let s = cand.score.ln() + p.ln();
                let k = c.idx(i, i + 1, t);
                if s > c.viterbi[k] {
                    c.viterbi[k] = s;
                    c.back[k] = Some(Back::Leaf { cand: ci });
                }
                c.inside[k] = log_add(c.inside[k], s);
            }
        }
        for r in &g.unary {
            let kt = c.idx(i, i + 1, r.tag);
            if c.viterbi[kt] == f64::NEG_INFINITY {
                continue;
            }
            let k = c.idx(i, i + 1, r.lhs);
            let s = r.logp + c.viterbi[kt];
            if s > c.viterbi[k] {
                c.viterbi[k] = s;
                c.back[k] = Some(Back::Unary { tag: r.tag });
            }
            c.inside[k] = log_add(c.inside[k], r.logp + c.inside[kt]);
        }
    }
    for len in 2..=n {
        for i in 0..=n - len {
            let j = i + len;
            for split in i + 1..j {
                for (ri, r) in g.binary.iter().enumerate() {
                    let kl = c.idx(i, split, r.left);
                    let kr = c.idx(split, j, r.right);
                    if c.viterbi[kl] == f64::NEG_INFINITY || c.viterbi[kr] == f64::NEG_INFINITY {
                        continue;
                    }
                    let k = c.idx(i, j, r.lhs);
                    let s = r.logp + c.viterbi[kl] + c.viterbi[kr];
                    if s > c.viterbi[k] {
                        c.viterbi[k] = s;
                        c.back[k] = Some(Back::Binary { rule: ri, split });
                    }
                    let ins = r.logp + c.inside[kl] + c.inside[kr];
                    c.inside[k] = log_add(c.inside[k], ins);
                }
            }
        }
    }
    c
}

fn build_tree(
    c: &Chart,
    g: &Grammar,
    sentence: &SentenceLattice,
    i: usize,
    j: usize,
    sym: usize,
) -> ParseTree {
    let label = g.symbols[sym].clone();
    match c.back[c.idx(i, j, sym)].expect("reachable chart cell has a backpointer") {
        Back::Leaf { cand } => ParseTree::Leaf {
            tag: label,
            pos: i,
            word: sentence.positions()[i].candidates()[cand].word.clone(),
        },
        Back::Unary { tag } => ParseTree::Unary {
            label,
            child: Box::new(build_tree(c, g, sentence, i, j, tag)),
        },
        Back::Binary { rule, split } => {
            let r = &g.binary[rule];
            ParseTree::Binary {
                label,
                left: Box::new(build_tree(c, g, sentence, i, split, r.left)),
                right: Box::new(build_tree(c, g, sentence, split, j, r.right)),
            }
        }
    }
}

/// Viterbi parse of the lattice from the start symbol over the whole span.
pub fn parse_lattice(sentence: &SentenceLattice, g: &Grammar, tl: &TagLexicon) -> ParseResult {
    let c = fill_chart(sentence, g, tl);
    let n = sentence.len();
    let root = c.viterbi[c.idx(0, n, g.start)];
    if root == f64::NEG_INFINITY {
        return ParseResult {
            selections: Vec::new(),
            tree: None,
            log_score: f64::NEG_INFINITY,
        };
    }
    let tree = build_tree(&c, g, sentence, 0, n, g.start);
    let selections = tree.leaves().into_iter().map(|(_, w, _)| w.to_string()).collect();
    ParseResult {
        selections,
        tree: Some(tree),
        log_score: root,
    }
}

/// Total probability of the lattice over all candidate choices and trees.
pub fn inside_probability(sentence: &SentenceLattice, g: &Grammar, tl: &TagLexicon) -> f64 {
    log_inside_probability(sentence, g, tl).exp()
}

pub fn log_inside_probability(sentence: &SentenceLattice, g: &Grammar, tl: &TagLexicon) -> f64 {
    let c = fill_chart(sentence, g, tl);
    c.inside[c.idx(0, sentence.len(), g.start)]
}

/// Per-page parse summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectReport {
    pub results: Vec<ParseResult>,
}

impl SelectReport {
    pub fn parsed(&self) -> usize {
        self.results.iter().filter(|r| r.is_parsed()).count()
    }

    pub fn parsed_fraction(&self) -> f64 {
        if self.results.is_empty() {
            return 0.0;
        }
        self.parsed() as f64 / self.results.len() as f64
    }
}

/// Parses every sentence and promotes the Viterbi-selected candidates to the
/// top of their sets. Unparsed sentences are left unchanged.
pub fn select_by_parse(
    page: &Page,
    g: &Grammar,
    tl: &TagLexicon,
    execution: Execution,
) -> Result<(Page, SelectReport)> {
    let results = par::map_with(execution, page.sentences(), |s| parse_lattice(s, g, tl));
    let mut out = page.clone();
    for (s, r) in out.sentences_mut().iter_mut().zip(&results) {
        for (set, word) in s.positions_mut().iter_mut().zip(&r.selections) {
            set.promote(word, SELECT_BONUS)?;
        }
    }
    Ok((out, SelectReport { results }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_candidate_set, ImageId};
    use approx::assert_relative_eq;

    fn lattice(cols: &[&[(&str, f64)]]) -> SentenceLattice {
        let sets = cols
            .iter()
            .enumerate()
            .map(|(i, c)| make_candidate_set(ImageId(i as u32), c.iter().copied()).unwrap())
            .collect();
        SentenceLattice::new(sets).unwrap()
    }

    const TOY: &str = "\
%start S
S -> NP VP 0.5
S -> V NP 0.5
NP -> Det N 0.6
NP -> Det NB 0.4
NB -> N N 1.0
VP -> V NP 1.0
the\tDet:1.0
tire\tV:1.0
farm\tV:0.7,N:0.3
form\tN:1.0
application\tN:1.0
fill\tV:1.0
";

    #[test]
    fn loads_the_toy_grammar() {
        let (g, tl) = load_grammar(TOY.as_bytes()).unwrap();
        assert_eq!(g.start(), "S");
        assert_eq!(g.rule_count(), 6);
        assert_eq!(tl.len(), 6);
        assert_eq!(g.rule_prob("NP", &["Det", "N"]), 0.6);
        assert_eq!(tl.prob("farm", "N"), 0.3);
        // unknown words spread over the open classes
        assert_relative_eq!(tl.prob("zebra", "N"), 1.0 / 3.0);
        assert_eq!(tl.prob("The", "Det"), 1.0);
    }

    #[test]
    fn grammar_errors() {
        let g = |s: &str| load_grammar(s.as_bytes());
        assert!(g("S -> NP VP 1.0\nNP -> N 1.0\nVP -> V 1.0\nx\tN:1.0\ny\tV:1.0\n").is_ok());
        let err = g("S -> NP VP 0.6\nNP -> N 1.0\nVP -> V 1.0\n").unwrap_err();
        assert!(err.to_string().contains("sum to"), "{err}");
        let err = g("S -> A B C 1.0\n").unwrap_err();
        assert!(matches!(&err, Error::Parse { line: 1, message } if message.contains("Chomsky")));
        let err = g("S -> NP VP 1.0\nNP -> N 1.0\n").unwrap_err();
        assert!(matches!(&err, Error::Parse { line: 1, message } if message.contains("'VP'")), "{err}");
        assert!(g("S -> NP 1.0\nNP -> N 1.0\n").is_err());
        assert!(g("S -> N 1.5\n").is_err());
        assert!(g("S -> N 1.0\nx\tN:0.5\n").is_err());
        assert!(g("S -> N 1.0\nx\tN\n").is_err());
        assert!(g("%bogus\n").is_err());
    }

    #[test]
    fn grammar_picks_the_grammatical_candidates() {
        let (g, tl) = load_grammar(TOY.as_bytes()).unwrap();
        // "fill the application form" with the recognizer preferring the
        // ungrammatical readings
        let s = lattice(&[
            &[("fill", 1.0)],
            &[("tire", 0.6), ("the", 0.4)],
            &[("application", 1.0)],
            &[("farm", 0.55), ("form", 0.45)],
        ]);
        let r = parse_lattice(&s, &g, &tl);
        assert!(r.is_parsed());
        assert_eq!(r.selections, ["fill", "the", "application", "form"]);
        assert_eq!(
            r.tree.as_ref().unwrap().to_string(),
            "(S (V fill) (NP (Det the) (NB (N application) (N form))))"
        );
        assert_relative_eq!(r.log_score.exp(), 0.5 * 0.4 * 0.4 * 0.45, max_relative = 1e-12);
        let tree = r.tree.unwrap();
        assert_relative_eq!(tree.log_score(&g, &tl, &s), r.log_score, epsilon = 1e-12);
    }

    #[test]
    fn single_position_sentence() {
        let (g, tl) = load_grammar("S -> N 1.0\nform\tN:1.0\nfarm\tN:1.0\n".as_bytes()).unwrap();
        let s = lattice(&[&[("farm", 0.6), ("form", 0.4)]]);
        let r = parse_lattice(&s, &g, &tl);
        assert_eq!(r.selections, ["farm"]);
        assert_eq!(r.tree.unwrap().to_string(), "(S (N farm))");
        assert_relative_eq!(r.log_score, 0.6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn unparsable_lattice() {
        let (g, tl) = load_grammar(TOY.as_bytes()).unwrap();
        let s = lattice(&[&[("the", 1.0)]]);
        let r = parse_lattice(&s, &g, &tl);
        assert!(!r.is_parsed() && r.selections.is_empty());
        assert_eq!(inside_probability(&s, &g, &tl), 0.0);
        let page = Page::new(vec![s]).unwrap();
        let (out, rep) = select_by_parse(&page, &g, &tl, Execution::Sequential).unwrap();
        assert_eq!(out, page);
        assert_eq!(rep.parsed(), 0);
    }

    #[test]
    fn inside_sums_over_derivations() {
        let (g, tl) = load_grammar(TOY.as_bytes()).unwrap();
        // unambiguous: inside equals Viterbi
        let s = lattice(&[&[("the", 1.0)], &[("form", 1.0)], &[("fill", 1.0)], &[("the", 1.0)], &[("form", 1.0)]]);
        let r = parse_lattice(&s, &g, &tl);
        assert_relative_eq!(inside_probability(&s, &g, &tl), r.log_score.exp(), max_relative = 1e-12);
        // "farm" at the last position reads as N only; two candidates give two derivations
        let s = lattice(&[
            &[("the", 1.0)],
            &[("form", 1.0)],
            &[("fill", 1.0)],
            &[("the", 1.0)],
            &[("farm", 0.5), ("form", 0.5)],
        ]);
        let p_form = 0.5 * 0.6 * 0.6 * 0.5;
        let p_farm = 0.5 * 0.6 * 0.6 * 0.5 * 0.3;
        assert_relative_eq!(inside_probability(&s, &g, &tl), p_form + p_farm, max_relative = 1e-12);
        let r = parse_lattice(&s, &g, &tl);
        assert_relative_eq!(r.log_score.exp(), p_form, max_relative = 1e-12);
    }

    #[test]
    fn selection_promotes_and_is_idempotent() {
        let (g, tl) = load_grammar(TOY.as_bytes()).unwrap();
        let s = lattice(&[
            &[("fill", 1.0)],
            &[("tire", 0.6), ("the", 0.4)],
            &[("application", 1.0)],
            &[("farm", 0.55), ("form", 0.45)],
        ]);
        let page = Page::new(vec![s]).unwrap();
        let (once, rep) = select_by_parse(&page, &g, &tl, Execution::Sequential).unwrap();
        assert_eq!(rep.parsed_fraction(), 1.0);
        assert_eq!(once.set_at((0, 1)).top1().word, "the");
        assert_eq!(once.set_at((0, 3)).top1().word, "form");
        let (twice, _) = select_by_parse(&once, &g, &tl, Execution::Parallel).unwrap();
        assert_eq!(twice, once);
    }
}
