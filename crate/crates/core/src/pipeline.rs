//! End-to-end evaluation: train, simulate, select in three stages, report.
//!
//! Stage A takes the recognizer's top1. Stage B relaxes with collocation
//! support, prunes and applies the parser. Stage C interleaves visual
//! constraints with the same steps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::collocation::{split_sentences, train, CollocationModel, DEFAULT_MAX_DISTANCE};
use crate::constraints::{integrate, ConstraintParams, IntegrateReport};
use crate::degrade::{calibrate, read_confusion, rng_from_seed, simulate_page, ConfusionModel};
use crate::error::{Error, Result};
use crate::imaging::{add_noise, detect_relations, render_word, renderable, MatchConfig, RelationGraph, RelationType};
use crate::lattice::{correct_rate, decide_page, DecisionSequence, ImageId, Page};
use crate::lexicon::{read_lexicon, Lexicon};
use crate::par;
use crate::parser::{load_grammar, select_by_parse, Grammar, SelectReport, TagLexicon};
use crate::relaxation::{prune, run_relaxation, RelaxParams, RelaxReport};

/// Which selection stages to run. The baseline always runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub relax_parse: bool,
    pub constraints: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            relax_parse: true,
            constraints: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagingParams {
    /// Pixel flip probability applied to every rendered word image.
    pub flip_rate: f64,
    pub tau_same: f64,
    pub types: Vec<RelationType>,
}

impl Default for ImagingParams {
    fn default() -> Self {
        ImagingParams {
            flip_rate: 0.0,
            tau_same: MatchConfig::TAU_SAME_CLEAN,
            types: vec![RelationType::Same],
        }
    }
}

impl ImagingParams {
    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            tau_same: self.tau_same,
            ..MatchConfig::clean().with_types(&self.types)
        }
    }
}

/// Everything a run depends on. Paths are absolute or relative to the
/// working directory once loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub k: usize,
    pub target_top1: f64,
    pub tolerance: f64,
    pub stages: Stages,
    pub training: PathBuf,
    /// (name, path) per test article.
    pub articles: Vec<(String, PathBuf)>,
    pub grammar: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub confusion: Option<PathBuf>,
    /// Reject articles sharing a sentence with the training text.
    pub check_overlap: bool,
    pub relax: RelaxParams,
    pub constraints: ConstraintParams,
    pub imaging: ImagingParams,
}

impl PipelineConfig {
    /// A config with defaults for everything but the file paths.
    pub fn new(training: PathBuf, articles: Vec<(String, PathBuf)>, grammar: PathBuf) -> Self {
        PipelineConfig {
            seed: 0,
            k: crate::lattice::DEFAULT_K_MAX,
            target_top1: 0.57,
            tolerance: 0.01,
            stages: Stages::default(),
            training,
            articles,
            grammar,
            lexicon: None,
            confusion: None,
            check_overlap: false,
            relax: RelaxParams::default(),
            constraints: ConstraintParams::default(),
            imaging: ImagingParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if !(self.target_top1 > 0.0 && self.target_top1 <= 1.0) {
            return Err(Error::validation("target_top1 must lie in (0,1]"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::validation("tolerance must be positive"));
        }
        if self.articles.is_empty() {
            return Err(Error::validation("no test articles configured"));
        }
        if let Some((_, p)) = self.articles.iter().find(|(_, p)| *p == self.training) {
            return Err(Error::validation(format!(
                "article {} is also the training corpus",
                p.display()
            )));
        }
        if !(0.0..=1.0).contains(&self.imaging.flip_rate) {
            return Err(Error::validation("flip_rate outside [0,1]"));
        }
        self.relax.validate()?;
        self.constraints.validate()
    }

    /// Every field in a fixed order; floats in round-trip form.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let r = &self.relax;
        let c = &self.constraints;
        let im = &self.imaging;
        let _ = writeln!(s, "seed={}\nk={}\ntarget_top1={:?}\ntolerance={:?}", self.seed, self.k, self.target_top1, self.tolerance);
        let _ = writeln!(s, "stages={:?}", self.stages);
        let _ = writeln!(s, "training={}", self.training.display());
        for (n, p) in &self.articles {
            let _ = writeln!(s, "article={n}:{}", p.display());
        }
        let _ = writeln!(s, "grammar={}", self.grammar.display());
        let _ = writeln!(s, "lexicon={:?}\nconfusion={:?}\ncheck_overlap={}", self.lexicon, self.confusion, self.check_overlap);
        let _ = writeln!(
            s,
            "relax={:?},{},{:?},{},{:?},{},{:?}",
            r.alpha, r.window, r.epsilon, r.max_iters, r.prune_floor, r.keep_min, r.sigma
        );
        let _ = writeln!(s, "constraints={:?},{:?},{}", c.boost, c.follow_gap, c.min_len);
        let _ = writeln!(s, "imaging={:?},{:?},{:?}", im.flip_rate, im.tau_same, im.types);
        s
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }
}

fn parse_value<T: std::str::FromStr>(v: &str, line: usize, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("invalid value '{v}' for {key}")))
}

fn parse_bool(v: &str, line: usize, key: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::parse(line, format!("invalid boolean '{v}' for {key}"))),
    }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Parses the line-based config format. Relative paths resolve against
/// `base_dir`.
///
/// ```text
/// [run]
/// seed = 1
/// [corpus]
/// training = train.txt
/// articles = a.txt, b.txt
/// grammar = desk.grammar
/// ```
pub fn parse_config(text: &str, base_dir: &Path) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::new(PathBuf::new(), Vec::new(), PathBuf::new());
    let mut names: Option<Vec<String>> = None;
    let mut paths: Vec<PathBuf> = Vec::new();
    let (mut have_training, mut have_grammar) = (false, false);
    let mut section = String::new();
    let resolve = |v: &str| base_dir.join(v);
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            if !["run", "corpus", "relax", "constraints", "imaging"].contains(&section.as_str()) {
                return Err(Error::parse(line, format!("unknown section [{section}]")));
            }
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::parse(line, "expected 'key = value'"))?;
        let k = key;
        match (section.as_str(), key) {
            ("run", "seed") => cfg.seed = parse_value(value, line, k)?,
            ("run", "k") => cfg.k = parse_value(value, line, k)?,
            ("run", "target_top1") => cfg.target_top1 = parse_value(value, line, k)?,
            ("run", "tolerance") => cfg.tolerance = parse_value(value, line, k)?,
            ("run", "stages") => {
                let mut st = Stages {
                    relax_parse: false,
                    constraints: false,
                };
                for s in list(value) {
                    match s {
                        "baseline" => {}
                        "relax_parse" => st.relax_parse = true,
                        "constraints" => st.constraints = true,
                        other => {
                            return Err(Error::parse(
                                line,
                                format!("unknown stage '{other}' (expected baseline, relax_parse, constraints)"),
                            ))
                        }
                    }
                }
                cfg.stages = st;
            }
            ("corpus", "training") => {
                cfg.training = resolve(value);
                have_training = true;
            }
            ("corpus", "articles") => paths = list(value).into_iter().map(resolve).collect(),
            ("corpus", "names") => names = Some(list(value).into_iter().map(String::from).collect()),
            ("corpus", "grammar") => {
                cfg.grammar = resolve(value);
                have_grammar = true;
            }
            ("corpus", "lexicon") => cfg.lexicon = Some(resolve(value)),
            ("corpus", "confusion") => cfg.confusion = Some(resolve(value)),
            ("corpus", "check_overlap") => cfg.check_overlap = parse_bool(value, line, k)?,
            ("relax", "alpha") => cfg.relax.alpha = parse_value(value, line, k)?,
            ("relax", "window") => cfg.relax.window = parse_value(value, line, k)?,
            ("relax", "epsilon") => cfg.relax.epsilon = parse_value(value, line, k)?,
            ("relax", "max_iters") => cfg.relax.max_iters = parse_value(value, line, k)?,
            ("relax", "prune_floor") => cfg.relax.prune_floor = parse_value(value, line, k)?,
            ("relax", "keep_min") => cfg.relax.keep_min = parse_value(value, line, k)?,
            ("relax", "sigma") => cfg.relax.sigma = parse_value(value, line, k)?,
            ("constraints", "boost") => cfg.constraints.boost = parse_value(value, line, k)?,
            ("constraints", "follow_gap") => cfg.constraints.follow_gap = parse_value(value, line, k)?,
            ("constraints", "min_len") => cfg.constraints.min_len = parse_value(value, line, k)?,
            ("imaging", "flip_rate") => cfg.imaging.flip_rate = parse_value(value, line, k)?,
            ("imaging", "tau_same") => cfg.imaging.tau_same = parse_value(value, line, k)?,
            ("imaging", "types") => {
                cfg.imaging.types = list(value)
                    .into_iter()
                    .map(|t| {
                        let n: u8 = parse_value(t, line, k)?;
                        RelationType::from_number(n).map_err(|e| Error::parse(line, e.to_string()))
                    })
                    .collect::<Result<_>>()?;
            }
            ("", _) => return Err(Error::parse(line, format!("key '{key}' outside any [section]"))),
            _ => return Err(Error::parse(line, format!("unknown key '{key}' in [{section}]"))),
        }
    }
    if !have_training {
        return Err(Error::validation("config is missing [corpus] training"));
    }
    if !have_grammar {
        return Err(Error::validation("config is missing [corpus] grammar"));
    }
    let names = match names {
        Some(n) if n.len() != paths.len() => {
            return Err(Error::validation(format!(
                "{} article names for {} article paths",
                n.len(),
                paths.len()
            )))
        }
        Some(n) => n,
        None => paths
            .iter()
            .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
            .collect(),
    };
    cfg.articles = names.into_iter().zip(paths).collect();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Loaded inputs shared by every seed of an experiment.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub model: CollocationModel,
    pub lexicon: Lexicon,
    pub grammar: Grammar,
    pub tags: TagLexicon,
    pub confusion: ConfusionModel,
    pub articles: Vec<(String, Vec<Vec<String>>)>,
}

fn read_text(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(split_sentences(&text))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Reads every file the config names and trains the collocation model.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    cfg.validate()?;
    let training = read_text(&cfg.training)?;
    let articles = cfg
        .articles
        .iter()
        .map(|(n, p)| Ok((n.clone(), read_text(p)?)))
        .collect::<Result<Vec<_>>>()?;
    if cfg.check_overlap {
        let seen: std::collections::HashSet<&Vec<String>> = training.iter().collect();
        for (name, a) in &articles {
            if let Some(s) = a.iter().find(|s| seen.contains(s)) {
                return Err(Error::validation(format!(
                    "article {name} shares the sentence '{}' with the training corpus",
                    s.join(" ")
                )));
            }
        }
    }
    let model = train(&training, DEFAULT_MAX_DISTANCE.max(cfg.relax.window))?;
    let lexicon = match &cfg.lexicon {
        Some(p) => read_lexicon(open(p)?)?,
        None => Lexicon::new(training.iter().chain(articles.iter().flat_map(|(_, a)| a)).flatten())?,
    };
    let (grammar, tags) = load_grammar(open(&cfg.grammar)?)?;
    let confusion = match &cfg.confusion {
        Some(p) => read_confusion(open(p)?)?,
        None => ConfusionModel::default(),
    };
    Ok(Inputs {
        model,
        lexicon,
        grammar,
        tags,
        confusion,
        articles,
    })
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ArticleRow {
    pub name: String,
    pub words: usize,
    pub baseline: f64,
    pub relax_parse: Option<f64>,
    pub constraints: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: String,
    /// Calibrated channel.
    pub sub_rate: f64,
    pub score_noise: f64,
    /// Largest per-sentence relaxation iteration count in stage B.
    pub relax_iterations: usize,
    /// Largest number of interleaved rounds in stage C.
    pub constraint_rounds: usize,
    pub parsed_fraction: f64,
    pub consensus_misses: usize,
    pub type1_edges: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ArticleRow>,
    pub total: Option<ArticleRow>,
    pub meta: ReportMeta,
}

fn weighted(rows: &[ArticleRow], f: impl Fn(&ArticleRow) -> Option<f64>) -> Option<f64> {
    let words: usize = rows.iter().map(|r| r.words).sum();
    let mut sum = 0.0;
    for r in rows {
        sum += f(r)? * r.words as f64;
    }
    Some(sum / words as f64)
}

/// Word-count-weighted aggregate of the rows; `None` when there are none.
pub fn total_row(rows: &[ArticleRow]) -> Option<ArticleRow> {
    if rows.is_empty() {
        return None;
    }
    Some(ArticleRow {
        name: "Total".into(),
        words: rows.iter().map(|r| r.words).sum(),
        baseline: weighted(rows, |r| Some(r.baseline))?,
        relax_parse: weighted(rows, |r| r.relax_parse),
        constraints: weighted(rows, |r| r.constraints),
    })
}

/// Fixed-width comparison table with percentages to two decimals.
pub fn report_table(report: &EvaluationReport) -> String {
    let with_b = report.rows.first().is_some_and(|r| r.relax_parse.is_some())
        || report.total.as_ref().is_some_and(|r| r.relax_parse.is_some());
    let with_c = report.rows.first().is_some_and(|r| r.constraints.is_some())
        || report.total.as_ref().is_some_and(|r| r.constraints.is_some());
    let mut out = format!("{:<10}{:>8}{:>14}", "Article", "Words", "Recognition");
    if with_b {
        let _ = write!(out, "{:>12}", "Selection");
    }
    if with_c {
        let _ = write!(out, "{:>14}", "+Constraints");
    }
    out.push('\n');
    for r in report.rows.iter().chain(&report.total) {
        let _ = write!(out, "{:<10}{:>8}{:>14.2}", r.name, r.words, 100.0 * r.baseline);
        if let Some(b) = r.relax_parse {
            let _ = write!(out, "{:>12.2}", 100.0 * b);
        }
        if let Some(c) = r.constraints {
            let _ = write!(out, "{:>14.2}", 100.0 * c);
        }
        out.push('\n');
    }
    out
}

impl EvaluationReport {
    /// Table followed by `# key = value` metadata lines.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(report_table(self).as_bytes())?;
        let m = &self.meta;
        writeln!(out, "# seed = {}", m.seed)?;
        writeln!(out, "# config_hash = {}", m.config_hash)?;
        writeln!(out, "# sub_rate = {:.6}", m.sub_rate)?;
        writeln!(out, "# score_noise = {:.6}", m.score_noise)?;
        writeln!(out, "# relax_iterations = {}", m.relax_iterations)?;
        writeln!(out, "# constraint_rounds = {}", m.constraint_rounds)?;
        writeln!(out, "# parsed_fraction = {:.4}", m.parsed_fraction)?;
        writeln!(out, "# consensus_misses = {}", m.consensus_misses)?;
        writeln!(out, "# type1_edges = {}", m.type1_edges)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is UTF-8")
    }
}

/// Stage B output for one article.
#[derive(Clone, Debug)]
pub struct RelaxParseOutcome {
    pub relaxed: Page,
    pub relax: RelaxReport,
    pub selected: Page,
    pub parse: SelectReport,
    pub decisions: DecisionSequence,
}

/// Intermediate results of one article, kept for inspection and tests.
#[derive(Clone, Debug)]
pub struct ArticleOutcome {
    pub name: String,
    /// Simulated recognizer output with word bitmaps attached.
    pub page: Page,
    pub graph: RelationGraph,
    pub baseline: DecisionSequence,
    pub relax_parse: Option<RelaxParseOutcome>,
    pub constraints: Option<(Page, IntegrateReport)>,
}

impl ArticleOutcome {
    fn row(&self) -> Result<ArticleRow> {
        let truth = self.page.truth_map();
        let rate = |d: &DecisionSequence| correct_rate(d, &truth);
        Ok(ArticleRow {
            name: self.name.clone(),
            words: truth.len(),
            baseline: rate(&self.baseline)?,
            relax_parse: self.relax_parse.as_ref().map(|b| rate(&b.decisions)).transpose()?,
            constraints: self
                .constraints
                .as_ref()
                .map(|(p, _)| rate(&decide_page(p)))
                .transpose()?,
        })
    }
}

/// Seed for the noise on one word image.
fn image_seed(seed: u64, id: ImageId) -> u64 {
    seed ^ (u64::from(id.0) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Renders the truth of every position, degraded by `flip_rate`.
fn page_bitmaps(page: &Page, flip_rate: f64, seed: u64) -> Result<BTreeMap<ImageId, crate::imaging::Bitmap>> {
    let sets: Vec<_> = page.sets().collect();
    let bitmaps = par::map(&sets, |set| -> Result<Option<(ImageId, crate::imaging::Bitmap)>> {
        let Some(word) = set.truth().filter(|w| renderable(w)) else {
            return Ok(None);
        };
        let clean = render_word(word)?;
        let bm = if flip_rate > 0.0 {
            add_noise(&clean, flip_rate, &mut rng_from_seed(image_seed(seed, set.image_id())))?
        } else {
            clean
        };
        Ok(Some((set.image_id(), bm)))
    });
    bitmaps.into_iter().filter_map(|r| r.transpose()).collect()
}

/// Simulates, calibrates and runs every enabled stage for each article.
pub fn evaluate(cfg: &PipelineConfig, inputs: &Inputs) -> Result<(EvaluationReport, Vec<ArticleOutcome>)> {
    cfg.validate()?;
    let all: Vec<Vec<String>> = inputs.articles.iter().flat_map(|(_, a)| a.iter().cloned()).collect();
    let cm = calibrate(
        &inputs.lexicon,
        &inputs.confusion,
        &all,
        cfg.target_top1,
        cfg.tolerance,
        cfg.k,
        cfg.seed,
    )?;
    log::info!("calibrated channel: sub_rate={:.4} score_noise={:.4}", cm.sub_rate, cm.score_noise);
    // one simulation over all articles, so the baseline totals match the
    // calibration measurement exactly
    let combined = simulate_page(&all, &inputs.lexicon, &cm, cfg.k, cfg.seed, 0)?;
    let mut pages = Vec::with_capacity(inputs.articles.len());
    let mut offset = 0;
    for (name, a) in &inputs.articles {
        let sentences = combined.sentences()[offset..offset + a.iter().filter(|s| !s.is_empty()).count()].to_vec();
        offset += sentences.len();
        pages.push((name.clone(), Page::new(sentences)?));
    }

    let outcomes = par::map(&pages, |(name, page)| run_article(cfg, inputs, name, page));
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let rows = outcomes.iter().map(ArticleOutcome::row).collect::<Result<Vec<_>>>()?;
    let parsed: Vec<&SelectReport> = outcomes
        .iter()
        .flat_map(|o| {
            o.relax_parse
                .as_ref()
                .map(|b| &b.parse)
                .into_iter()
                .chain(o.constraints.as_ref().map(|(_, r)| &r.parse))
        })
        .collect();
    let sentences: usize = parsed.iter().map(|r| r.results.len()).sum();
    let meta = ReportMeta {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        sub_rate: cm.sub_rate,
        score_noise: cm.score_noise,
        relax_iterations: outcomes
            .iter()
            .filter_map(|o| o.relax_parse.as_ref().map(|b| b.relax.max_iterations()))
            .max()
            .unwrap_or(0),
        constraint_rounds: outcomes
            .iter()
            .filter_map(|o| o.constraints.as_ref().map(|(_, r)| r.rounds))
            .max()
            .unwrap_or(0),
        parsed_fraction: if sentences == 0 {
            0.0
        } else {
            parsed.iter().map(|r| r.parsed()).sum::<usize>() as f64 / sentences as f64
        },
        consensus_misses: outcomes
            .iter()
            .filter_map(|o| o.constraints.as_ref().map(|(_, r)| r.consensus.consensus_misses))
            .sum(),
        type1_edges: outcomes
            .iter()
            .map(|o| o.graph.edges_of_type(RelationType::Same).count())
            .sum(),
    };
    let report = EvaluationReport {
        total: total_row(&rows),
        rows,
        meta,
    };
    Ok((report, outcomes))
}

fn run_article(cfg: &PipelineConfig, inputs: &Inputs, name: &str, page: &Page) -> Result<ArticleOutcome> {
    let bitmaps = page_bitmaps(page, cfg.imaging.flip_rate, cfg.seed)?;
    let page = page.clone().with_bitmaps(bitmaps)?;
    let baseline = decide_page(&page);

    let relax_parse = if cfg.stages.relax_parse {
        let (relaxed, relax) = run_relaxation(&page, &inputs.model, &cfg.relax)?;
        let pruned = prune(&relaxed, &cfg.relax)?;
        let (selected, parse) = select_by_parse(&pruned, &inputs.grammar, &inputs.tags, cfg.relax.execution)?;
        let decisions = decide_page(&selected);
        Some(RelaxParseOutcome {
            relaxed,
            relax,
            selected,
            parse,
            decisions,
        })
    } else {
        None
    };

    let graph = if cfg.stages.constraints {
        detect_relations(page.bitmaps(), &cfg.imaging.match_config())
    } else {
        RelationGraph::unlinked(page.sets().map(|s| s.image_id()))
    };
    let constraints = if cfg.stages.constraints {
        Some(integrate(
            &page,
            &inputs.model,
            &graph,
            &cfg.relax,
            &cfg.constraints,
            &inputs.grammar,
            &inputs.tags,
        )?)
    } else {
        None
    };
    Ok(ArticleOutcome {
        name: name.to_string(),
        page,
        graph,
        baseline,
        relax_parse,
        constraints,
    })
}

/// Loads everything the config names and evaluates it.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvaluationReport> {
    let inputs = load_inputs(cfg)?;
    Ok(evaluate(cfg, &inputs)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, words: usize, a: f64, b: Option<f64>, c: Option<f64>) -> ArticleRow {
        ArticleRow {
            name: name.into(),
            words,
            baseline: a,
            relax_parse: b,
            constraints: c,
        }
    }

    fn meta() -> ReportMeta {
        ReportMeta {
            seed: 1,
            config_hash: "x".into(),
            sub_rate: 0.0,
            score_noise: 0.0,
            relax_iterations: 0,
            constraint_rounds: 0,
            parsed_fraction: 0.0,
            consensus_misses: 0,
            type1_edges: 0,
        }
    }

    #[test]
    fn table_shapes() {
        let empty = EvaluationReport {
            rows: vec![],
            total: None,
            meta: meta(),
        };
        assert_eq!(report_table(&empty).lines().count(), 1);
        let rows = vec![row("A06", 100, 0.5712, Some(0.8), Some(0.85))];
        let one = EvaluationReport {
            total: total_row(&rows),
            rows,
            meta: meta(),
        };
        let t = report_table(&one);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("57.12") && lines[2].starts_with("Total"));
        assert_eq!(lines[1][10..], lines[2][10..]);
        let base_only = vec![row("A06", 10, 0.5, None, None), row("G02", 30, 0.7, None, None)];
        let r = EvaluationReport {
            total: total_row(&base_only),
            rows: base_only,
            meta: meta(),
        };
        let t = report_table(&r);
        assert!(!t.contains("Selection"));
        assert!(t.lines().nth(3).unwrap().ends_with("65.00"));
    }

    #[test]
    fn totals_are_weighted() {
        let rows = vec![
            row("a", 100, 0.5, Some(0.6), None),
            row("b", 300, 0.9, Some(0.7), None),
        ];
        let t = total_row(&rows).unwrap();
        assert_eq!(t.words, 400);
        assert!((t.baseline - 0.8).abs() < 1e-12);
        assert!((t.relax_parse.unwrap() - 0.675).abs() < 1e-12);
        assert_eq!(t.constraints, None);
    }

    const CONFIG: &str = "\
[run]
seed = 7
stages = baseline, relax_parse
[corpus]
training = train.txt   # training text
articles = a.txt, b.txt
grammar = desk.grammar
[relax]
alpha = 0.5
[imaging]
types = 1, 2
";

    #[test]
    fn config_parsing() {
        let cfg = parse_config(CONFIG, Path::new("/data")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.training, PathBuf::from("/data/train.txt"));
        assert_eq!(cfg.articles[1], ("b".to_string(), PathBuf::from("/data/b.txt")));
        assert!(cfg.stages.relax_parse && !cfg.stages.constraints);
        assert_eq!(cfg.relax.alpha, 0.5);
        assert_eq!(cfg.imaging.types, vec![RelationType::Same, RelationType::Subimage]);

        let bad = |t: &str| parse_config(t, Path::new("."));
        assert!(matches!(bad("[run]\nseed = x\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(bad("[nope]\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(bad("[run]\nfoo = 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(bad("[run]\nseed = 1\n").is_err());
        let same = "[corpus]\ntraining = t.txt\narticles = t.txt\ngrammar = g\n";
        assert!(matches!(bad(same), Err(Error::Validation(_))));
        let alpha = CONFIG.replace("alpha = 0.5", "alpha = 2");
        assert!(matches!(bad(&alpha), Err(Error::Validation(_))));
    }

    #[test]
    fn config_hash_tracks_fields() {
        let cfg = parse_config(CONFIG, Path::new("/data")).unwrap();
        let again = parse_config(&format!("# comment\n{CONFIG}"), Path::new("/data")).unwrap();
        assert_eq!(cfg.hash(), again.hash());
        let mut other = cfg.clone();
        other.relax.epsilon = 2e-4;
        assert_ne!(cfg.hash(), other.hash());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash().len(), 64);
    }
}
