//! Word collocation statistics: distance-indexed pair counts and mutual
//! information, plus plain-text corpus tokenization.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Default maximum collocation distance.
pub const DEFAULT_MAX_DISTANCE: usize = 2;

/// Default squash scale mapping mutual information into (0,1).
pub const DEFAULT_SIGMA: f64 = 2.0;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits text into tokens: runs of alphanumeric characters, with every other
/// non-whitespace character as a token of its own. Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_gaps(text).into_iter().map(|(t, _)| t).collect()
}

/// Tokens paired with whether whitespace preceded them.
fn tokenize_with_gaps(text: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut gap = true;
    let mut word_gap = true;
    for c in text.chars() {
        if is_word_char(c) {
            if word.is_empty() {
                word_gap = gap;
            }
            word.push(c);
            gap = false;
            continue;
        }
        if !word.is_empty() {
            out.push((std::mem::take(&mut word), word_gap));
        }
        if c.is_whitespace() {
            gap = true;
        } else {
            out.push((c.to_string(), gap));
            gap = false;
        }
    }
    if !word.is_empty() {
        out.push((word, word_gap));
    }
    out
}

/// Tokenizes and splits into sentences. A sentence ends at `.`, `!` or `?`
/// when the next token follows whitespace and starts with a capital letter,
/// and at the end of the text.
pub fn split_sentences(text: &str) -> Vec<Vec<String>> {
    let tokens = tokenize_with_gaps(text);
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (i, (tok, _)) in tokens.iter().enumerate() {
        current.push(tok.clone());
        let terminal = matches!(tok.as_str(), "." | "!" | "?");
        let boundary = terminal
            && tokens.get(i + 1).is_some_and(|(next, gap)| {
                *gap && next.chars().next().is_some_and(char::is_uppercase)
            });
        if boundary {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Unigram and distance-indexed ordered pair counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollocationModel {
    max_distance: usize,
    total_tokens: u64,
    vocab: HashMap<String, u32>,
    words: Vec<String>,
    unigram: Vec<u64>,
    pairs: HashMap<(u32, u32, u8), u64>,
}

impl CollocationModel {
    pub fn empty(max_distance: usize) -> Result<Self> {
        if max_distance == 0 || max_distance > u8::MAX as usize {
            return Err(Error::validation(format!(
                "max distance {max_distance} must be in 1..=255"
            )));
        }
        Ok(CollocationModel {
            max_distance,
            total_tokens: 0,
            vocab: HashMap::new(),
            words: Vec::new(),
            unigram: Vec::new(),
            pairs: HashMap::new(),
        })
    }

    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.vocab.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.vocab.insert(word.to_string(), id);
        self.words.push(word.to_string());
        self.unigram.push(0);
        id
    }

    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn vocabulary_size(&self) -> usize {
        self.words.len()
    }

    pub fn unigram(&self, word: &str) -> u64 {
        self.vocab
            .get(word)
            .map_or(0, |&id| self.unigram[id as usize])
    }

    pub fn pair(&self, a: &str, b: &str, d: usize) -> u64 {
        if d == 0 || d > self.max_distance {
            return 0;
        }
        match (self.vocab.get(a), self.vocab.get(b)) {
            (Some(&ia), Some(&ib)) => self.pairs.get(&(ia, ib, d as u8)).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Iterates `(a, b, d, count)` over all non-zero pair counts.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, usize, u64)> {
        self.pairs.iter().map(|(&(a, b, d), &c)| {
            (
                self.words[a as usize].as_str(),
                self.words[b as usize].as_str(),
                d as usize,
                c,
            )
        })
    }

    pub fn unigrams(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words
            .iter()
            .zip(&self.unigram)
            .map(|(w, &c)| (w.as_str(), c))
    }

    fn check_distance(&self, d: usize) -> Result<()> {
        if d == 0 || d > self.max_distance {
            return Err(Error::validation(format!(
                "distance {d} outside 1..={}",
                self.max_distance
            )));
        }
        Ok(())
    }

    /// Pointwise mutual information of `b` occurring `d` tokens after `a`,
    /// with add-one smoothing on the pair and unigram counts:
    /// `log2((c_ab + 1) * N / ((u_a + 1) * (u_b + 1)))`.
    ///
    /// An empty model carries no evidence and scores every pair 0.
    pub fn mi_score(&self, a: &str, b: &str, d: usize) -> Result<f64> {
        self.check_distance(d)?;
        if self.total_tokens == 0 {
            return Ok(0.0);
        }
        let n = self.total_tokens as f64;
        let pab = (self.pair(a, b, d) + 1) as f64;
        let ua = (self.unigram(a) + 1) as f64;
        let ub = (self.unigram(b) + 1) as f64;
        Ok((pab * n / (ua * ub)).log2())
    }

    /// Mutual information squashed into (0,1): `1 / (1 + exp(-MI / sigma))`.
    pub fn support(&self, a: &str, b: &str, d: usize, sigma: f64) -> Result<f64> {
        Ok(squash(self.mi_score(a, b, d)?, sigma))
    }
}

pub fn squash(mi: f64, sigma: f64) -> f64 {
    1.0 / (1.0 + (-mi / sigma).exp())
}

/// Counts unigrams over all tokens and ordered pairs `(a, b, d)` where `b`
/// sits exactly `d` positions after `a` inside one sentence.
pub fn train<S: AsRef<str>>(sentences: &[Vec<S>], max_distance: usize) -> Result<CollocationModel> {
    let mut model = CollocationModel::empty(max_distance)?;
    let mut ids = Vec::new();
    for sentence in sentences {
        ids.clear();
        ids.extend(sentence.iter().map(|t| model.intern(t.as_ref())));
        for &id in &ids {
            model.unigram[id as usize] += 1;
        }
        model.total_tokens += ids.len() as u64;
        for (i, &a) in ids.iter().enumerate() {
            for d in 1..=max_distance {
                let Some(&b) = ids.get(i + d) else { break };
                *model.pairs.entry((a, b, d as u8)).or_insert(0) += 1;
            }
        }
    }
    Ok(model)
}

/// Writes the text model format: a header line, then `[unigram]` and
/// `[pair]` sections sorted by word.
pub fn save_model<W: Write>(model: &CollocationModel, mut out: W) -> Result<()> {
    writeln!(
        out,
        "collocation v1 D={} N={}",
        model.max_distance, model.total_tokens
    )?;
    writeln!(out, "[unigram]")?;
    let mut unigrams: Vec<(&str, u64)> = model.unigrams().collect();
    unigrams.sort_unstable();
    for (w, c) in unigrams {
        writeln!(out, "{w}\t{c}")?;
    }
    writeln!(out, "[pair]")?;
    let mut pairs: Vec<(&str, &str, usize, u64)> = model.pairs().collect();
    pairs.sort_unstable();
    for (a, b, d, c) in pairs {
        writeln!(out, "{a}\t{b}\t{d}\t{c}")?;
    }
    Ok(())
}

fn parse_count(s: &str, line: usize) -> Result<u64> {
    if s.starts_with('-') {
        return Err(Error::parse(line, format!("negative count '{s}'")));
    }
    s.parse()
        .map_err(|_| Error::parse(line, format!("bad count '{s}'")))
}

pub fn load_model<R: BufRead>(input: R) -> Result<CollocationModel> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Unigram,
        Pair,
    }
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing header"))??;
    let mut d = None;
    let mut n = None;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("collocation") || parts.next() != Some("v1") {
        return Err(Error::parse(1, "expected header 'collocation v1 D=<d> N=<n>'"));
    }
    for p in parts {
        if let Some(v) = p.strip_prefix("D=") {
            d = Some(v.parse::<usize>().map_err(|_| Error::parse(1, "bad D"))?);
        } else if let Some(v) = p.strip_prefix("N=") {
            n = Some(parse_count(v, 1)?);
        } else {
            return Err(Error::parse(1, format!("unexpected header field '{p}'")));
        }
    }
    let (Some(d), Some(n)) = (d, n) else {
        return Err(Error::parse(1, "header needs D= and N="));
    };
    let mut model = CollocationModel::empty(d).map_err(|e| Error::parse(1, e.to_string()))?;
    let mut section = Section::None;
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        match line.as_str() {
            "" => continue,
            "[unigram]" => {
                section = Section::Unigram;
                continue;
            }
            "[pair]" => {
                section = Section::Pair;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match section {
            Section::None => return Err(Error::parse(lineno, "data before any section")),
            Section::Unigram => {
                let [w, c] = fields[..] else {
                    return Err(Error::parse(lineno, "expected 'word TAB count'"));
                };
                if w.is_empty() || model.vocab.contains_key(w) {
                    return Err(Error::parse(lineno, format!("empty or repeated word '{w}'")));
                }
                let id = model.intern(w);
                model.unigram[id as usize] = parse_count(c, lineno)?;
            }
            Section::Pair => {
                let [a, b, dist, c] = fields[..] else {
                    return Err(Error::parse(lineno, "expected 'a TAB b TAB d TAB count'"));
                };
                let dist: usize = dist
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad distance '{dist}'")))?;
                if dist == 0 || dist > d {
                    return Err(Error::parse(lineno, format!("distance {dist} outside 1..={d}")));
                }
                let count = parse_count(c, lineno)?;
                let (Some(&ia), Some(&ib)) = (model.vocab.get(a), model.vocab.get(b)) else {
                    return Err(Error::parse(lineno, "pair word missing from [unigram]"));
                };
                if count > model.unigram[ia as usize].min(model.unigram[ib as usize]) {
                    return Err(Error::parse(lineno, "pair count exceeds a unigram count"));
                }
                if model.pairs.insert((ia, ib, dist as u8), count).is_some() {
                    return Err(Error::parse(lineno, "repeated pair"));
                }
            }
        }
    }
    let sum: u64 = model.unigram.iter().sum();
    if sum != n {
        return Err(Error::parse(1, format!("N={n} but unigram counts sum to {sum}")));
    }
    model.total_tokens = n;
    Ok(model)
}
