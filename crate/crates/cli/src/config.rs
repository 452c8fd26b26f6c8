//! Run configuration.
//!
//! Written in the same sectioned text format as ontology files:
//!
//! ```text
//! [run]
//! seed = 7
//! out = runs/demo
//!
//! [corpus]
//! train = data/train.jsonl
//! eval = data/heldout.jsonl
//! # ontology = my_ontology.txt
//!
//! [scoring]
//! gamma0 = 0.85
//! gamma1 = 0.1
//! gamma2 = 0.05
//! semantics = union
//!
//! [miner]
//! tau_min = 0.25
//! tau_max = 0.6
//! batch_size = 64
//! target = 1000
//!
//! [optimizer]
//! lr = 0.005
//! epochs = 20
//!
//! [eval]
//! depths = [1, 10, 20, 50]
//! ```
//!
//! Every key is optional. Relative paths resolve against the config file's
//! directory. Stage seeds are derived from the single `[run] seed`:
//! synth = stream 1, miner = 2, encoder init = 3, training = 4 (see
//! [`metatrip_core::seed::derive_seed`]).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use metatrip_core::align::{LossConfig, TrainConfig};
use metatrip_core::embed::EncoderConfig;
use metatrip_core::evalx::Consistency;
use metatrip_core::miner::MinerConfig;
use metatrip_core::scoring::GammaWeights;
use metatrip_core::seed::derive_seed;
use metatrip_core::textfmt::{Document, Entry, Value};
use metatrip_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::synth::SyntheticSpec;

pub const SYNTH_STREAM: u64 = 1;
pub const MINER_STREAM: u64 = 2;
pub const ENCODER_STREAM: u64 = 3;
pub const TRAIN_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineSettings {
    pub batch_size: usize,
    pub target: usize,
    pub max_passes: usize,
}

impl Default for MineSettings {
    fn default() -> Self {
        MineSettings {
            batch_size: 64,
            target: 1000,
            max_passes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub depths: Vec<usize>,
    pub consistency: Consistency,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            depths: vec![1, 10, 20, 50],
            consistency: Consistency::Jaccard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub ontology: Option<PathBuf>,
    pub train_corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub miner: MinerConfig,
    pub mine: MineSettings,
    pub encoder: EncoderConfig,
    pub training: TrainConfig,
    pub eval: EvalSettings,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            ontology: None,
            train_corpus: None,
            eval_corpus: None,
            miner: MinerConfig::default(),
            mine: MineSettings::default(),
            encoder: EncoderConfig::default(),
            training: TrainConfig::default(),
            eval: EvalSettings::default(),
            synth: SyntheticSpec::default(),
        };
        cfg.set_seed(0);
        cfg
    }
}

fn scalar<'a>(e: &'a Entry, origin: &str) -> Result<&'a str> {
    match &e.value {
        Some(Value::Scalar(v)) => Ok(v),
        _ => Err(Error::parse(origin, e.line, format!("`{}` expects a single value", e.key))),
    }
}

fn list<'a>(e: &'a Entry, origin: &str) -> Result<&'a [String]> {
    match &e.value {
        Some(Value::List(v)) => Ok(v),
        _ => Err(Error::parse(origin, e.line, format!("`{}` expects a list `[a, b]`", e.key))),
    }
}

fn num<T: FromStr>(e: &Entry, origin: &str) -> Result<T> {
    let v = scalar(e, origin)?;
    v.parse()
        .map_err(|_| Error::parse(origin, e.line, format!("invalid value `{v}` for `{}`", e.key)))
}

fn parsed<T: FromStr<Err = Error>>(e: &Entry, origin: &str) -> Result<T> {
    scalar(e, origin)?
        .parse()
        .map_err(|err: Error| Error::parse(origin, e.line, err.to_string()))
}

fn path(e: &Entry, origin: &str, base: &Path) -> Result<PathBuf> {
    Ok(base.join(scalar(e, origin)?))
}

impl RunConfig {
    /// Sets the global seed and every derived stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = derive_seed(seed, SYNTH_STREAM);
        self.miner.seed = derive_seed(seed, MINER_STREAM);
        self.encoder.seed = derive_seed(seed, ENCODER_STREAM);
        self.training.seed = derive_seed(seed, TRAIN_STREAM);
    }

    pub fn load(file: &Path) -> Result<RunConfig> {
        let src = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        let base = file.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&src, &file.display().to_string(), base)
    }

    pub fn parse(src: &str, origin: &str, base: &Path) -> Result<RunConfig> {
        let doc = Document::parse(src, origin)?;
        let mut cfg = RunConfig::default();
        let mut gammas = (
            cfg.miner.gammas.g0(),
            cfg.miner.gammas.g1(),
            cfg.miner.gammas.g2(),
        );
        let mut gamma_line = 0;
        let mut seed = 0;
        const SECTIONS: [&str; 9] = ["run", "corpus", "scoring", "miner", "encoder", "loss", "optimizer", "eval", "synth"];
        for section in &doc.sections {
            if !SECTIONS.contains(&section.name.as_str()) {
                return Err(Error::parse(origin, section.line, format!("unknown section [{}]", section.name)));
            }
            for e in &section.entries {
                let unknown = || {
                    Err(Error::parse(
                        origin,
                        e.line,
                        format!("unknown key `{}` in [{}]", e.key, section.name),
                    ))
                };
                match (section.name.as_str(), e.key.as_str()) {
                    ("run", "seed") => seed = num(e, origin)?,
                    ("run", "out") => cfg.out = path(e, origin, base)?,
                    ("corpus", "ontology") => cfg.ontology = Some(path(e, origin, base)?),
                    ("corpus", "train") => cfg.train_corpus = Some(path(e, origin, base)?),
                    ("corpus", "eval") => cfg.eval_corpus = Some(path(e, origin, base)?),
                    ("scoring", "gamma0") => (gammas.0, gamma_line) = (num(e, origin)?, e.line),
                    ("scoring", "gamma1") => (gammas.1, gamma_line) = (num(e, origin)?, e.line),
                    ("scoring", "gamma2") => (gammas.2, gamma_line) = (num(e, origin)?, e.line),
                    ("scoring", "semantics") => cfg.miner.semantics = parsed(e, origin)?,
                    ("miner", "tau_min") => cfg.miner.tau_min = num(e, origin)?,
                    ("miner", "tau_max") => cfg.miner.tau_max = num(e, origin)?,
                    ("miner", "tie_policy") => cfg.miner.tie_policy = parsed(e, origin)?,
                    ("miner", "fallback_policy") => cfg.miner.fallback_policy = parsed(e, origin)?,
                    ("miner", "semi_hard_fraction") => cfg.miner.semi_hard_fraction = num(e, origin)?,
                    ("miner", "batch_size") => cfg.mine.batch_size = num(e, origin)?,
                    ("miner", "target") => cfg.mine.target = num(e, origin)?,
                    ("miner", "max_passes") => cfg.mine.max_passes = num(e, origin)?,
                    ("encoder", "patch_size") => cfg.encoder.patch_size = num(e, origin)?,
                    ("encoder", "embed_dim") => cfg.encoder.embed_dim = num(e, origin)?,
                    ("encoder", "depth") => cfg.encoder.depth = num(e, origin)?,
                    ("encoder", "heads") => cfg.encoder.heads = num(e, origin)?,
                    ("encoder", "mlp_ratio") => cfg.encoder.mlp_ratio = num(e, origin)?,
                    ("encoder", "ln_epsilon") => cfg.encoder.ln_epsilon = num(e, origin)?,
                    ("encoder", "max_seq_len") => cfg.encoder.max_seq_len = num(e, origin)?,
                    ("encoder", "vocab_size") => cfg.encoder.vocab_size = num(e, origin)?,
                    ("encoder", "init_scale") => cfg.encoder.init_scale = num(e, origin)?,
                    ("loss", "alpha") => cfg.training.loss.alpha = num(e, origin)?,
                    ("loss", "eta") => cfg.training.loss.eta = num(e, origin)?,
                    ("loss", "sign_mode") => cfg.training.loss.sign_mode = parsed(e, origin)?,
                    ("optimizer", "lr") => cfg.training.adam.lr = num(e, origin)?,
                    ("optimizer", "beta1") => cfg.training.adam.beta1 = num(e, origin)?,
                    ("optimizer", "beta2") => cfg.training.adam.beta2 = num(e, origin)?,
                    ("optimizer", "epsilon") => cfg.training.adam.epsilon = num(e, origin)?,
                    ("optimizer", "weight_decay") => cfg.training.adam.weight_decay = num(e, origin)?,
                    ("optimizer", "epochs") => cfg.training.epochs = num(e, origin)?,
                    ("optimizer", "batch_size") => cfg.training.batch_size = num(e, origin)?,
                    ("eval", "depths") => {
                        cfg.eval.depths = list(e, origin)?
                            .iter()
                            .map(|d| {
                                d.parse()
                                    .map_err(|_| Error::parse(origin, e.line, format!("invalid depth `{d}`")))
                            })
                            .collect::<Result<_>>()?
                    }
                    ("eval", "consistency") => cfg.eval.consistency = parsed(e, origin)?,
                    ("synth", "classes") => cfg.synth.classes = list(e, origin)?.to_vec(),
                    ("synth", "train_per_class") => cfg.synth.train_per_class = num(e, origin)?,
                    ("synth", "heldout_per_class") => cfg.synth.heldout_per_class = num(e, origin)?,
                    ("synth", "adjectives") => cfg.synth.adjectives = list(e, origin)?.to_vec(),
                    ("synth", "directions") => cfg.synth.directions = list(e, origin)?.to_vec(),
                    ("synth", "overlap_rate") => cfg.synth.overlap_rate = num(e, origin)?,
                    ("synth", "heldout_overlap_rate") => cfg.synth.heldout_overlap_rate = num(e, origin)?,
                    ("synth", "image_size") => cfg.synth.image_size = num(e, origin)?,
                    ("synth", "noise") => cfg.synth.noise = num(e, origin)?,
                    _ => return unknown(),
                }
            }
        }
        cfg.miner.gammas = GammaWeights::new(gammas.0, gammas.1, gammas.2).map_err(|e| Error::parse(origin, gamma_line, e.to_string()))?;
        cfg.set_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.miner.validate()?;
        self.encoder.validate()?;
        self.training.validate()?;
        if self.mine.batch_size < 3 {
            return Err(Error::Validation("miner batch_size must be at least 3".into()));
        }
        if self.eval.depths.is_empty() || self.eval.depths.contains(&0) {
            return Err(Error::Validation("eval depths must be a non-empty list of positive counts".into()));
        }
        Ok(())
    }

    pub fn loss(&self) -> &LossConfig {
        &self.training.loss
    }
}
