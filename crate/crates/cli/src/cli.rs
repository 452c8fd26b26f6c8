//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use metatrip_core::evalx::Consistency;
use metatrip_core::ober::{DiseaseEntry, MetaEntities};
use metatrip_core::records::EntityRecord;
use metatrip_core::scoring::{score, DeltaSemantics, GammaWeights};
use metatrip_core::{Error, Result};
use serde::Deserialize;

use crate::config::RunConfig;
use crate::pipeline::{load_ontology, run_pipeline, EvalReport, PipelineOutcome, Stage, EVAL_REPORT};
use crate::synth::{generate, write_corpus, SyntheticSpec};

/// Like `println!`, but a closed stdout is not an error.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "metatrip", version, about = "Meta-entity triplet mining and image/report alignment")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Rerun stages even when their artifacts are up to date.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    /// Training corpus (JSONL).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Evaluation corpus (JSONL); defaults to the training corpus.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Ontology file; the built-in ontology is used otherwise.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract meta-entities from the training and evaluation corpora.
    Extract(CorpusArgs),
    /// Score two meta-entity records and print the breakdown as JSON.
    Score(ScoreArgs),
    /// Mine triplets from extracted entities.
    Mine(MineArgs),
    /// Train the projection heads on mined triplets.
    Train(TrainArgs),
    /// Evaluate retrieval precision and print the tables.
    EvalRetrieval(EvalArgs),
    /// Evaluate zero-shot classification and print the metrics.
    EvalClassify(EvalArgs),
    /// Generate a synthetic corpus into the output directory.
    Synth(SynthArgs),
    /// Run several pipeline stages.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// First record: a file, or inline JSON (`{"entries": [...]}` or `[...]`).
    pub first: String,
    /// Second record, same forms.
    pub second: String,
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub gamma2: Option<f64>,
    /// `union` or `intersection`.
    #[arg(long)]
    pub semantics: Option<DeltaSemantics>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Anchors per mining batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of triplets to collect.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub tau_min: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Share of negatives drawn from the semi-hard band.
    #[arg(long)]
    pub semi_hard_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Retrieval depths, e.g. `1,10,20,50`.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    /// `jaccard` or `exact`.
    #[arg(long)]
    pub consistency: Option<Consistency>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes, taken from the default class list.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub heldout_per_class: Option<usize>,
    #[arg(long)]
    pub overlap_rate: Option<f64>,
    #[arg(long)]
    pub heldout_overlap_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Stages to run, e.g. `extract,mine`; all four by default.
    #[arg(long, value_delimiter = ',')]
    pub stages: Option<Vec<Stage>>,
}

/// Maps an error onto the documented exit codes.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn apply_corpus(cfg: &mut RunConfig, args: &CorpusArgs) {
    if let Some(p) = &args.train {
        cfg.train_corpus = Some(p.clone());
    }
    if let Some(p) = &args.eval {
        cfg.eval_corpus = Some(p.clone());
    }
    if let Some(p) = &args.ontology {
        cfg.ontology = Some(p.clone());
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn report_stages(outcome: &PipelineOutcome) {
    for (stage, status) in &outcome.stages {
        eprintln!("{stage}: {}", serde_json::to_value(status).unwrap_or_default().as_str().unwrap_or("?"));
    }
    if let Some(c) = &outcome.mine_counts {
        eprintln!("mine counts: {}", serde_json::to_string(c).unwrap_or_default());
    }
}

fn pipeline(cfg: &RunConfig, stage: Stage, force: bool) -> Result<()> {
    cfg.validate()?;
    let outcome = run_pipeline(cfg, &[stage], force)?;
    report_stages(&outcome);
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RecordInput {
    Record(EntityRecord),
    Entries { entries: Vec<DiseaseEntry> },
    Bare(Vec<DiseaseEntry>),
}

fn read_record(arg: &str) -> Result<MetaEntities> {
    let trimmed = arg.trim_start();
    let (src, origin) = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        (arg.to_string(), "<inline>".to_string())
    } else {
        let p = Path::new(arg);
        (fs::read_to_string(p).map_err(|e| Error::io(p, e))?, arg.to_string())
    };
    let input: RecordInput = serde_json::from_str(src.trim()).map_err(|e| Error::parse(origin, e.line(), e.to_string()))?;
    Ok(match input {
        RecordInput::Record(r) => r.entities(),
        RecordInput::Entries { entries } | RecordInput::Bare(entries) => MetaEntities::from(entries),
    })
}

fn read_report(cfg: &RunConfig) -> Result<EvalReport> {
    let p = cfg.out.join(EVAL_REPORT);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn print_retrieval(report: &EvalReport) {
    let Some(r) = &report.retrieval else {
        out!("no retrieval results");
        return;
    };
    out!("consistency: {}", r.consistency);
    out!("{:<5} {:<10} {:>4} {:>8} {:>8}", "task", "entity", "R", "trained", "baseline");
    for (t, b) in r.trained.iter().zip(&r.baseline) {
        let mark = if t.truncated { "*" } else { "" };
        out!(
            "{:<5} {:<10} {:>4} {:>8.2} {:>8.2}{mark}",
            t.task.to_string(),
            t.kind.to_string(),
            t.r,
            t.precision,
            b.precision
        );
    }
    if r.trained.iter().any(|t| t.truncated) {
        out!("* R exceeds the gallery size");
    }
}

fn print_classification(report: &EvalReport) {
    match (&report.classification, &report.classification_note) {
        (Some(c), _) => {
            out!("classes: {}", c.trained.classes.join(", "));
            out!("evaluated {} samples, skipped {}", c.trained.evaluated, c.trained.skipped);
            out!("{:<9} {:>8} {:>8} {:>8}", "heads", "ACC", "F1", "AUC");
            for (name, m) in [("trained", &c.trained.metrics), ("baseline", &c.baseline.metrics)] {
                out!("{name:<9} {:>8.2} {:>8.2} {:>8.4}", m.accuracy, m.macro_f1, m.macro_auc);
            }
        }
        (None, Some(note)) => out!("classification skipped: {note}"),
        (None, None) => out!("no classification results"),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli.common)?;
    let force = cli.common.force;
    match cli.command {
        Command::Extract(args) => {
            apply_corpus(&mut cfg, &args);
            pipeline(&cfg, Stage::Extract, force)
        }
        Command::Score(args) => {
            let w = &cfg.miner.gammas;
            let gammas = GammaWeights::new(
                args.gamma0.unwrap_or(w.g0()),
                args.gamma1.unwrap_or(w.g1()),
                args.gamma2.unwrap_or(w.g2()),
            )?;
            let semantics = args.semantics.unwrap_or(cfg.miner.semantics);
            let a = read_record(&args.first)?;
            let b = read_record(&args.second)?;
            out!("{}", serde_json::to_string_pretty(&score(&a, &b, &gammas, semantics))?);
            Ok(())
        }
        Command::Mine(args) => {
            apply_corpus(&mut cfg, &args.corpus);
            set(&mut cfg.mine.batch_size, args.batch_size);
            set(&mut cfg.mine.target, args.target);
            set(&mut cfg.miner.tau_min, args.tau_min);
            set(&mut cfg.miner.tau_max, args.tau_max);
            set(&mut cfg.miner.semi_hard_fraction, args.semi_hard_fraction);
            pipeline(&cfg, Stage::Mine, force)
        }
        Command::Train(args) => {
            apply_corpus(&mut cfg, &args.corpus);
            set(&mut cfg.training.epochs, args.epochs);
            set(&mut cfg.training.adam.lr, args.lr);
            set(&mut cfg.training.batch_size, args.batch_size);
            pipeline(&cfg, Stage::Train, force)
        }
        Command::EvalRetrieval(args) => {
            apply_eval(&mut cfg, &args);
            pipeline(&cfg, Stage::Eval, force)?;
            print_retrieval(&read_report(&cfg)?);
            Ok(())
        }
        Command::EvalClassify(args) => {
            apply_eval(&mut cfg, &args);
            pipeline(&cfg, Stage::Eval, force)?;
            print_classification(&read_report(&cfg)?);
            Ok(())
        }
        Command::Synth(args) => {
            let seed = cfg.synth.seed;
            let mut spec = match args.classes {
                Some(n) => SyntheticSpec::with_class_count(n)?,
                None => cfg.synth.clone(),
            };
            spec.seed = seed;
            set(&mut spec.train_per_class, args.train_per_class);
            set(&mut spec.heldout_per_class, args.heldout_per_class);
            set(&mut spec.overlap_rate, args.overlap_rate);
            set(&mut spec.heldout_overlap_rate, args.heldout_overlap_rate);
            let ont = load_ontology(cfg.ontology.as_deref())?;
            let paths = write_corpus(&generate(&spec, &ont)?, &cfg.out)?;
            for p in [&paths.train, &paths.heldout, &paths.labels] {
                out!("{}", p.display());
            }
            Ok(())
        }
        Command::Run(args) => {
            apply_corpus(&mut cfg, &args.corpus);
            let stages = args.stages.unwrap_or_else(|| Stage::ALL.to_vec());
            cfg.validate()?;
            let outcome = run_pipeline(&cfg, &stages, force)?;
            report_stages(&outcome);
            Ok(())
        }
    }
}

fn apply_eval(cfg: &mut RunConfig, args: &EvalArgs) {
    apply_corpus(cfg, &args.corpus);
    set(&mut cfg.eval.depths, args.depths.clone());
    set(&mut cfg.eval.consistency, args.consistency);
}
