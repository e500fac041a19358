use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use candsel::collocation::{load_model, save_model, split_sentences, train, DEFAULT_MAX_DISTANCE};
use candsel::constraints::{integrate, ConstraintParams};
use candsel::degrade::{read_confusion, rng_from_seed, simulate_page, ConfusionModel};
use candsel::desk::{self, DeskSpec};
use candsel::imaging::{
    add_noise, detect_relations, read_pbm_set, render_word, renderable, write_graph, write_pbm_set, MatchConfig,
};
use candsel::lattice::{read_page, write_page, DEFAULT_K_MAX};
use candsel::lexicon::{read_lexicon, write_lexicon, Lexicon};
use candsel::parser::{load_grammar, select_by_parse};
use candsel::pipeline::{load_config, run_pipeline};
use candsel::relaxation::{prune, run_relaxation, RelaxParams};
use candsel::Error;

#[derive(Parser)]
#[command(name = "candsel", version, about = "Candidate selection for degraded text recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a word collocation model from running text.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Largest word distance counted.
        #[arg(long, default_value_t = DEFAULT_MAX_DISTANCE)]
        window: usize,
    },
    /// Simulate recognizer candidate sets for a text.
    Simulate {
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Confusion model file; the built-in classes when omitted.
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write rendered word images as a PBM set.
        #[arg(long)]
        bitmaps: Option<PathBuf>,
        /// Pixel flip probability for the rendered images.
        #[arg(long, default_value_t = 0.0)]
        flip_rate: f64,
    },
    /// Select one word per image: relaxation, pruning and parsing, optionally
    /// with visual constraints.
    Select {
        #[arg(long)]
        page: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        grammar: PathBuf,
        /// Enforce relations detected between word images.
        #[arg(long, requires = "bitmaps")]
        constraints: bool,
        /// PBM set holding one image per word id.
        #[arg(long)]
        bitmaps: Option<PathBuf>,
        /// Similarity threshold for whole-image matches.
        #[arg(long, default_value_t = MatchConfig::TAU_SAME_CLEAN)]
        tau_same: f64,
        /// Write the detected relation graph here.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full three-stage evaluation described by a config file.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic desk corpus with grammar, lexicon and config.
    DeskCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DeskSpec::default().training_tokens)]
        training_tokens: usize,
        #[arg(long, default_value_t = DeskSpec::default().article_tokens)]
        article_tokens: usize,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(split_sentences(&text))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { corpus, out, window } => {
            let sentences = read_sentences(&corpus)?;
            let model = train(&sentences, window)?;
            let mut w = create(&out)?;
            save_model(&model, &mut w)?;
            w.flush()?;
            log::info!("trained on {} tokens", model.total_tokens());
        }
        Command::Simulate {
            text,
            lexicon,
            confusion,
            seed,
            k,
            out,
            bitmaps,
            flip_rate,
        } => {
            let sentences = read_sentences(&text)?;
            let lex = read_lexicon(open(&lexicon)?)?;
            let cm = match confusion {
                Some(p) => read_confusion(open(&p)?)?,
                None => ConfusionModel::default(),
            };
            let page = simulate_page(&sentences, &lex, &cm, k, seed, 0)?;
            let mut w = create(&out)?;
            write_page(&page, &mut w)?;
            w.flush()?;
            if let Some(path) = bitmaps {
                let mut rng = rng_from_seed(seed);
                let mut images = std::collections::BTreeMap::new();
                for set in page.sets() {
                    if let Some(word) = set.truth().filter(|w| renderable(w)) {
                        images.insert(set.image_id(), add_noise(&render_word(word)?, flip_rate, &mut rng)?);
                    }
                }
                let mut w = create(&path)?;
                write_pbm_set(&images, &mut w)?;
                w.flush()?;
            }
        }
        Command::Select {
            page,
            model,
            grammar,
            constraints,
            bitmaps,
            tau_same,
            graph,
            out,
        } => {
            let mut page = read_page(open(&page)?)?;
            let model = load_model(open(&model)?)?;
            let (grammar, tags) = load_grammar(open(&grammar)?)?;
            let relax = RelaxParams::default();
            let selected = if constraints {
                let path = bitmaps.expect("clap enforces --bitmaps");
                page = page.with_bitmaps(read_pbm_set(open(&path)?)?)?;
                let cfg = MatchConfig {
                    tau_same,
                    ..MatchConfig::clean()
                };
                let g = detect_relations(page.bitmaps(), &cfg);
                if let Some(p) = graph {
                    let mut w = create(&p)?;
                    write_graph(&g, &mut w)?;
                    w.flush()?;
                }
                let params = ConstraintParams::default();
                integrate(&page, &model, &g, &relax, &params, &grammar, &tags)?.0
            } else {
                let (relaxed, _) = run_relaxation(&page, &model, &relax)?;
                let pruned = prune(&relaxed, &relax)?;
                select_by_parse(&pruned, &grammar, &tags, relax.execution)?.0
            };
            let mut w = create(&out)?;
            write_page(&selected, &mut w)?;
            w.flush()?;
        }
        Command::Evaluate { config, report } => {
            let cfg = load_config(&config)?;
            let rep = run_pipeline(&cfg)?;
            fs::write(&report, rep.to_text()).with_context(|| format!("cannot write {}", report.display()))?;
            print!("{}", candsel::pipeline::report_table(&rep));
        }
        Command::DeskCorpus {
            out,
            seed,
            training_tokens,
            article_tokens,
        } => {
            let spec = DeskSpec {
                training_tokens,
                article_tokens,
                ..DeskSpec::default()
            };
            let corpus = desk::generate(seed, &spec);
            let config = desk::write_corpus(&corpus, &out, seed)?;
            let lex = Lexicon::new(corpus.vocabulary())?;
            let mut w = create(&out.join("lexicon.txt"))?;
            write_lexicon(&lex, &mut w)?;
            w.flush()?;
            println!("{}", config.display());
        }
    }
    Ok(())
}

/// 1 validation, 2 I/O, 3 calibration.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) => 2,
                Error::Calibration { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
