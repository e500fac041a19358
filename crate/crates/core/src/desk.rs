//! Synthetic desk corpus: a small seeded "world" of words with collocation
//! preferences, a sentence generator driven by the desk grammar, and writers
//! for the training text, test articles, grammar and tag lexicon.
//!
//! Word lists are chosen so that the default confusion classes map many words
//! onto other real words (form/farm/foam, hill/hall/bill, ...), which is what
//! makes candidate selection non-trivial.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::degrade::{rng_from_seed, SimRng};
use crate::error::Result;
use crate::parser::{load_grammar, Grammar, TagLexicon};

/// Desk grammar rules over the tags Det, N, V, P, Adj and Punc.
pub const DESK_RULES: &str = "\
%start S
%open N V Adj
S -> C Punc 1.0
C -> NP VP 0.7
C -> V NP 0.15
C -> VB PP 0.15
VP -> V NP 0.5
VP -> VB PP 0.3
VP -> V PP 0.2
VB -> V NP 1.0
NP -> Det N 0.55
NP -> Det NB 0.25
NP -> NP PP 0.2
NB -> Adj N 1.0
PP -> P NP 1.0
";

const NOUNS: &[&str] = &[
    "form", "farm", "foam", "fort", "fact", "face", "fate", "tale", "tail", "hall", "hill", "bell",
    "ball", "bill", "cat", "coat", "boat", "boot", "road", "rain", "lane", "line", "lake", "hand",
    "band", "bank", "tank", "tent", "nest", "note", "home", "hole", "time", "tide", "side", "site",
    "mile", "meal", "seal", "sail", "soil", "card", "cord", "bird", "wind", "land", "river", "house",
    "horse", "mouse", "desk", "dish", "fish", "film", "fire", "tree", "field", "wall", "well",
    "mill", "town", "barn", "corn", "horn", "door", "deer", "letter", "paper", "water", "winter",
    "table", "cable", "gate", "game", "name", "child", "month", "market", "garden", "window",
];

const VERBS: &[&str] = &[
    "fill", "fell", "tell", "sell", "take", "make", "bake", "wake", "move", "love", "give",
    "hold", "fold", "find", "bind", "mind", "send", "lend", "mend", "read", "lead", "load", "see",
    "keep", "open", "carry", "paint", "print", "want", "meet", "melt", "bring", "burn", "turn",
    "tear", "wear", "hear", "heat", "beat", "cut", "visit", "watch", "clean", "pull", "push",
];

const ADJECTIVES: &[&str] = &[
    "tall", "small", "old", "cold", "bold", "bad", "red", "big", "fine", "fair", "dark", "new",
    "late", "tame", "calm", "warm", "wet", "hot", "dry", "long", "young", "brown", "green",
    "quiet", "quick", "heavy", "empty", "full", "soft", "loud", "wide", "deep", "rich", "poor",
];

const DETERMINERS: &[&str] = &[
    "the", "a", "this", "that", "his", "her", "my", "our", "its", "each", "every", "one", "no",
];

const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "to", "of", "for", "from", "with", "by", "near", "into", "over", "under",
];

/// Sentence-final punctuation with its frequency.
const PUNCTUATION: &[(&str, f64)] = &[(".", 0.85), ("!", 0.07), ("?", 0.08)];

/// Probability that a slot is filled from its head's preferred list.
const FRAME_ADHERENCE: f64 = 0.85;
/// Probability that an NP takes a PP modifier (applied once, no nesting).
const NP_PP: f64 = 0.2;
/// Probability that a bare NP carries an adjective.
const NP_ADJ: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Det,
    N,
    V,
    P,
    Adj,
    Punc,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Det => "Det",
            Tag::N => "N",
            Tag::V => "V",
            Tag::P => "P",
            Tag::Adj => "Adj",
            Tag::Punc => "Punc",
        }
    }
}

/// Weighted word list with Zipf-like frequencies.
#[derive(Clone, Debug)]
struct Class {
    words: Vec<&'static str>,
    weights: Vec<f64>,
}

impl Class {
    fn zipf(words: &[&'static str], exponent: f64, rng: &mut SimRng) -> Self {
        let mut words = words.to_vec();
        words.shuffle(rng);
        let weights = (1..=words.len()).map(|r| (r as f64).powf(-exponent)).collect();
        Class { words, weights }
    }

    fn sample(&self, rng: &mut SimRng) -> usize {
        sample_weighted(&self.weights, rng)
    }
}

fn sample_weighted(weights: &[f64], rng: &mut SimRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        x -= w;
        if x < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Preferred collocates of each word, as indices into the other classes.
#[derive(Clone, Debug)]
pub struct DeskWorld {
    nouns: Class,
    verbs: Class,
    adjectives: Class,
    dets: Class,
    preps: Class,
    noun_adjs: Vec<Vec<usize>>,
    noun_verbs: Vec<Vec<usize>>,
    noun_preps: Vec<Vec<usize>>,
    verb_objects: Vec<Vec<usize>>,
    verb_preps: Vec<Vec<usize>>,
    prep_objects: Vec<Vec<usize>>,
}

fn pick_k(n: usize, k: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k.min(n));
    idx
}

impl DeskWorld {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let nouns = Class::zipf(NOUNS, 0.8, &mut rng);
        let verbs = Class::zipf(VERBS, 0.8, &mut rng);
        let adjectives = Class::zipf(ADJECTIVES, 0.8, &mut rng);
        let dets = Class::zipf(DETERMINERS, 1.1, &mut rng);
        let preps = Class::zipf(PREPOSITIONS, 1.0, &mut rng);
        let nn = nouns.words.len();
        let nv = verbs.words.len();
        let na = adjectives.words.len();
        let np = preps.words.len();
        let noun_adjs = (0..nn).map(|_| pick_k(na, 3, &mut rng)).collect();
        let noun_verbs = (0..nn).map(|_| pick_k(nv, 4, &mut rng)).collect();
        let noun_preps = (0..nn).map(|_| pick_k(np, 2, &mut rng)).collect();
        let verb_objects = (0..nv).map(|_| pick_k(nn, 5, &mut rng)).collect();
        let verb_preps = (0..nv).map(|_| pick_k(np, 2, &mut rng)).collect();
        let prep_objects = (0..np).map(|_| pick_k(nn, 8, &mut rng)).collect();
        DeskWorld {
            nouns,
            verbs,
            adjectives,
            dets,
            preps,
            noun_adjs,
            noun_verbs,
            noun_preps,
            verb_objects,
            verb_preps,
            prep_objects,
        }
    }

    /// Every word with its tag.
    pub fn tagged_words(&self) -> Vec<(&'static str, Tag)> {
        let mut out = Vec::new();
        for (class, tag) in [
            (&self.nouns, Tag::N),
            (&self.verbs, Tag::V),
            (&self.adjectives, Tag::Adj),
            (&self.dets, Tag::Det),
            (&self.preps, Tag::P),
        ] {
            out.extend(class.words.iter().map(|w| (*w, tag.clone())));
        }
        out.extend(PUNCTUATION.iter().map(|(p, _)| (*p, Tag::Punc)));
        out.sort();
        out
    }

    /// The desk grammar with a tag lexicon covering every world word.
    pub fn grammar_text(&self) -> String {
        let mut text = DESK_RULES.to_string();
        for (w, tag) in self.tagged_words() {
            let _ = writeln!(text, "{w}\t{}:1.0", tag.as_str());
        }
        text
    }

    pub fn grammar(&self) -> Result<(Grammar, TagLexicon)> {
        load_grammar(self.grammar_text().as_bytes())
    }

    fn frame_pick(&self, class: &Class, preferred: Option<&[usize]>, rng: &mut SimRng) -> usize {
        match preferred {
            Some(p) if !p.is_empty() && rng.random::<f64>() < FRAME_ADHERENCE => {
                *p.choose(rng).expect("non-empty")
            }
            _ => class.sample(rng),
        }
    }

    fn noun(&self, preferred: Option<&[usize]>, topic: &[f64], rng: &mut SimRng) -> usize {
        match preferred {
            Some(p) if !p.is_empty() && rng.random::<f64>() < FRAME_ADHERENCE => {
                let w: Vec<f64> = p.iter().map(|&i| topic[i]).collect();
                p[sample_weighted(&w, rng)]
            }
            _ => sample_weighted(topic, rng),
        }
    }

    fn np(&self, out: &mut Vec<&'static str>, head: Option<&[usize]>, topic: &[f64], pp: bool, rng: &mut SimRng) -> usize {
        let n = self.noun(head, topic, rng);
        out.push(self.dets.words[self.dets.sample(rng)]);
        if rng.random::<f64>() < NP_ADJ {
            let a = self.frame_pick(&self.adjectives, Some(&self.noun_adjs[n]), rng);
            out.push(self.adjectives.words[a]);
        }
        out.push(self.nouns.words[n]);
        if pp && rng.random::<f64>() < NP_PP {
            self.pp(out, &self.noun_preps[n], topic, false, rng);
        }
        n
    }

    fn pp(&self, out: &mut Vec<&'static str>, preps: &[usize], topic: &[f64], pp: bool, rng: &mut SimRng) {
        let p = self.frame_pick(&self.preps, Some(preps), rng);
        out.push(self.preps.words[p]);
        self.np(out, Some(&self.prep_objects[p]), topic, pp, rng);
    }

    /// Verb phrase after an optional subject noun.
    fn vp(&self, out: &mut Vec<&'static str>, subject: Option<usize>, topic: &[f64], rng: &mut SimRng) {
        let v = self.frame_pick(&self.verbs, subject.map(|s| self.noun_verbs[s].as_slice()), rng);
        out.push(self.verbs.words[v]);
        // imperatives have no bare V PP form
        let r = rng.random::<f64>() * if subject.is_some() { 1.0 } else { 0.8 };
        if r < 0.5 {
            self.np(out, Some(&self.verb_objects[v]), topic, true, rng);
        } else if r < 0.8 {
            self.np(out, Some(&self.verb_objects[v]), topic, false, rng);
            self.pp(out, &self.verb_preps[v], topic, false, rng);
        } else {
            self.pp(out, &self.verb_preps[v], topic, true, rng);
        }
    }

    /// One sentence, capitalized, ending in punctuation.
    fn sentence(&self, topic: &[f64], rng: &mut SimRng) -> Vec<String> {
        let mut out = Vec::new();
        if rng.random::<f64>() < 0.7 {
            let s = self.np(&mut out, None, topic, true, rng);
            self.vp(&mut out, Some(s), topic, rng);
        } else {
            self.vp(&mut out, None, topic, rng);
        }
        let punc: Vec<f64> = PUNCTUATION.iter().map(|(_, p)| *p).collect();
        out.push(PUNCTUATION[sample_weighted(&punc, rng)].0);
        let mut words: Vec<String> = out.into_iter().map(String::from).collect();
        words[0] = capitalize(&words[0]);
        words
    }

    fn base_topic(&self) -> Vec<f64> {
        self.nouns.weights.clone()
    }

    /// Noun weights of an article focused on a handful of nouns.
    fn article_topic(&self, rng: &mut SimRng) -> Vec<f64> {
        let mut t = self.base_topic();
        for i in pick_k(t.len(), 12, rng) {
            t[i] *= 6.0;
        }
        t
    }

    /// Sentences totalling at least `min_tokens` tokens.
    fn text(&self, topic: &[f64], min_tokens: usize, rng: &mut SimRng) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut n = 0;
        while n < min_tokens {
            let s = self.sentence(topic, rng);
            n += s.len();
            out.push(s);
        }
        out
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Sizes of a generated desk corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeskSpec {
    pub training_tokens: usize,
    pub articles: usize,
    pub article_tokens: usize,
}

impl Default for DeskSpec {
    fn default() -> Self {
        DeskSpec {
            training_tokens: 1_000_000,
            articles: 5,
            article_tokens: 2_000,
        }
    }
}

/// Article names, echoing a classic five-sample evaluation layout.
pub const ARTICLE_NAMES: [&str; 5] = ["A06", "G02", "J42", "N01", "R07"];

#[derive(Clone, Debug)]
pub struct DeskCorpus {
    pub training: Vec<Vec<String>>,
    /// (name, tokenized sentences)
    pub articles: Vec<(String, Vec<Vec<String>>)>,
    pub grammar_text: String,
}

impl DeskCorpus {
    /// Every distinct token of the training text and the articles.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: BTreeMap<&str, ()> = BTreeMap::new();
        for tok in self
            .training
            .iter()
            .chain(self.articles.iter().flat_map(|(_, a)| a))
            .flatten()
        {
            v.insert(tok, ());
        }
        v.into_keys().map(String::from).collect()
    }
}

/// Generates the training text and test articles. Training and articles come
/// from separate random streams, so no text is shared between them beyond
/// chance repeats of short sentences.
pub fn generate(world_seed: u64, spec: &DeskSpec) -> DeskCorpus {
    let world = DeskWorld::new(world_seed);
    let mut rng = rng_from_seed(world_seed.wrapping_add(1));
    let base = world.base_topic();
    let training = world.text(&base, spec.training_tokens, &mut rng);
    let articles = (0..spec.articles)
        .map(|i| {
            let mut arng = rng_from_seed(world_seed.wrapping_add(100 + i as u64));
            let topic = world.article_topic(&mut arng);
            let name = ARTICLE_NAMES
                .get(i)
                .map_or_else(|| format!("T{:02}", i + 1), |s| s.to_string());
            (name, world.text(&topic, spec.article_tokens, &mut arng))
        })
        .collect();
    DeskCorpus {
        training,
        articles,
        grammar_text: world.grammar_text(),
    }
}

/// Joins tokens back into running text: words separated by spaces,
/// punctuation attached to the preceding word, one sentence per line.
pub fn detokenize(sentences: &[Vec<String>]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, tok) in s.iter().enumerate() {
            let is_punct = !tok.chars().any(char::is_alphanumeric);
            if i > 0 && !is_punct {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out.push('\n');
    }
    out
}

/// File names used by [`write_corpus`].
pub const TRAINING_FILE: &str = "training.txt";
pub const GRAMMAR_FILE: &str = "desk.grammar";
pub const CONFIG_FILE: &str = "desk.cfg";

/// Writes the training text, one file per article, the grammar and a config
/// that evaluates them with `seed`. Returns the config path.
pub fn write_corpus(corpus: &DeskCorpus, dir: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRAINING_FILE), detokenize(&corpus.training))?;
    let mut files = Vec::new();
    for (name, sentences) in &corpus.articles {
        let file = format!("{name}.txt");
        fs::write(dir.join(&file), detokenize(sentences))?;
        files.push(file);
    }
    fs::write(dir.join(GRAMMAR_FILE), &corpus.grammar_text)?;
    let names: Vec<&str> = corpus.articles.iter().map(|(n, _)| n.as_str()).collect();
    let config = format!(
        "[run]\nseed = {seed}\n\n[corpus]\ntraining = {TRAINING_FILE}\narticles = {}\nnames = {}\ngrammar = {GRAMMAR_FILE}\n\n[relax]\nwindow = 2\nsigma = 1.0\n",
        files.join(", "),
        names.join(", ")
    );
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::split_sentences;
    use crate::imaging::renderable;
    use crate::parser::parse_lattice;
    use crate::lattice::{make_candidate_set, ImageId, SentenceLattice};

    fn small() -> DeskSpec {
        DeskSpec {
            training_tokens: 3_000,
            articles: 2,
            article_tokens: 500,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(7, &small());
        let b = generate(7, &small());
        assert_eq!(a.training, b.training);
        assert_eq!(a.articles, b.articles);
        assert_ne!(a.training, generate(8, &small()).training);
    }

    #[test]
    fn word_lists_have_no_duplicates_and_render() {
        let world = DeskWorld::new(1);
        let words = world.tagged_words();
        let mut names: Vec<&str> = words.iter().map(|(w, _)| *w).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), words.len());
        assert!(names.iter().all(|w| renderable(w) && renderable(&capitalize(w))));
    }

    #[test]
    fn text_round_trips_through_the_tokenizer() {
        let corpus = generate(3, &small());
        let text = detokenize(&corpus.articles[0].1);
        assert_eq!(split_sentences(&text), corpus.articles[0].1);
        assert!(corpus.articles[0].1.iter().map(Vec::len).sum::<usize>() >= 500);
    }

    #[test]
    fn every_generated_sentence_parses() {
        let corpus = generate(5, &small());
        let (g, tl) = load_grammar(corpus.grammar_text.as_bytes()).unwrap();
        assert_eq!(g.rule_count(), 13);
        for s in corpus.training.iter().take(300) {
            let sets = s
                .iter()
                .enumerate()
                .map(|(i, w)| make_candidate_set(ImageId(i as u32), [(w.as_str(), 1.0)]).unwrap())
                .collect();
            let r = parse_lattice(&SentenceLattice::new(sets).unwrap(), &g, &tl);
            assert!(r.is_parsed(), "{s:?}");
        }
    }
}
