//! Word lexicon with a BK-tree index for edit-distance-bounded lookup.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use strsim::levenshtein;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Node {
    word: usize,
    children: Vec<(usize, usize)>,
}

/// A set of dictionary words indexed for approximate lookup.
#[derive(Clone, Debug)]
pub struct Lexicon {
    words: Vec<String>,
    nodes: Vec<Node>,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let unique: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !w.is_empty())
            .collect();
        if unique.is_empty() {
            return Err(Error::validation("lexicon is empty"));
        }
        let words: Vec<String> = unique.into_iter().collect();
        let mut lex = Lexicon {
            words,
            nodes: Vec::new(),
        };
        for i in 0..lex.words.len() {
            lex.insert(i);
        }
        Ok(lex)
    }

    fn insert(&mut self, word: usize) {
        if self.nodes.is_empty() {
            self.nodes.push(Node {
                word,
                children: Vec::new(),
            });
            return;
        }
        let mut cur = 0;
        loop {
            let d = levenshtein(&self.words[self.nodes[cur].word], &self.words[word]);
            match self.nodes[cur].children.iter().find(|(cd, _)| *cd == d) {
                Some(&(_, next)) => cur = next,
                None => {
                    let idx = self.nodes.len();
                    self.nodes.push(Node {
                        word,
                        children: Vec::new(),
                    });
                    self.nodes[cur].children.push((d, idx));
                    return;
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.binary_search_by(|w| w.as_str().cmp(word)).is_ok()
    }

    /// Words in lexicographic order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// All words within edit distance `max_dist` of `query`, sorted by
    /// (distance, word).
    pub fn lookup(&self, query: &str, max_dist: usize) -> Vec<(&str, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let d = levenshtein(&self.words[node.word], query);
            if d <= max_dist {
                out.push((self.words[node.word].as_str(), d));
            }
            let lo = d.saturating_sub(max_dist);
            let hi = d + max_dist;
            stack.extend(
                node.children
                    .iter()
                    .filter(|(cd, _)| (lo..=hi).contains(cd))
                    .map(|&(_, c)| c),
            );
        }
        out.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        out
    }
}

/// Reads one word per line; blank lines are ignored.
pub fn read_lexicon<R: BufRead>(input: R) -> Result<Lexicon> {
    let mut words = Vec::new();
    for line in input.lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() {
            words.push(w.to_string());
        }
    }
    Lexicon::new(words)
}

pub fn write_lexicon<W: Write>(lex: &Lexicon, mut out: W) -> Result<()> {
    for w in lex.words() {
        writeln!(out, "{w}")?;
    }
    Ok(())
}
