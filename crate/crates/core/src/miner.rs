//! Entity-driven triplet mining.
//!
//! Within a mini-batch every sample is tried once as anchor, in seeded random
//! order. The positive is the other sample with the highest meta-entity score;
//! the negative is the remaining sample with the lowest score inside
//! `[tau_min, tau_max]` (a semi-hard negative). Scores are non-negative, so
//! the arg-max/arg-min are taken over the raw score.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ober::MetaEntities;
use crate::scoring::{score_total, DeltaSemantics, GammaWeights};
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub entities: MetaEntities,
}

#[derive(Debug, Clone)]
pub struct Batch {
    samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Result<Batch> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id `{}` in batch", s.id)));
            }
        }
        Ok(Batch { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    #[default]
    LowestId,
    SeededRandom,
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowest-id" => Ok(TiePolicy::LowestId),
            "seeded-random" => Ok(TiePolicy::SeededRandom),
            other => Err(Error::Validation(format!("unknown tie policy `{other}`"))),
        }
    }
}

/// What happens when no candidate falls inside the negative band. Neither
/// policy relaxes the band; both leave the anchor without a triplet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackPolicy {
    #[default]
    Skip,
    None,
}

impl FromStr for FallbackPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(FallbackPolicy::Skip),
            "none" => Ok(FallbackPolicy::None),
            other => Err(Error::Validation(format!("unknown fallback policy `{other}`"))),
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::LowestId => "lowest-id",
            TiePolicy::SeededRandom => "seeded-random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub gammas: GammaWeights,
    pub semantics: DeltaSemantics,
    pub tie_policy: TiePolicy,
    pub fallback_policy: FallbackPolicy,
    /// Probability that an anchor's negative is drawn from the semi-hard band;
    /// otherwise the lowest-scoring candidate in `[0, tau_max]` (an easy
    /// negative) is used. 1.0 is the standard setting.
    pub semi_hard_fraction: f64,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            tau_min: 0.25,
            tau_max: 0.6,
            gammas: GammaWeights::default(),
            semantics: DeltaSemantics::Union,
            tie_policy: TiePolicy::LowestId,
            fallback_policy: FallbackPolicy::Skip,
            semi_hard_fraction: 1.0,
            seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_min && self.tau_min <= self.tau_max && self.tau_max <= 1.0) {
            return Err(Error::Validation(format!(
                "need 0 <= tau_min <= tau_max <= 1, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        if !(0.0..=1.0).contains(&self.semi_hard_fraction) {
            return Err(Error::Validation(format!(
                "semi_hard_fraction must lie in [0, 1], got {}",
                self.semi_hard_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
    pub score_ap: f64,
    pub score_an: f64,
}

impl Triplet {
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.anchor_id, &self.positive_id, &self.negative_id)
    }
}

/// A selected batch position and its score against the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub score: f64,
}

fn score_row(anchor: usize, batch: &Batch, cfg: &MinerConfig) -> Vec<f64> {
    let a = &batch.samples[anchor].entities;
    batch
        .samples
        .iter()
        .enumerate()
        .map(|(j, s)| {
            if j == anchor {
                f64::NAN
            } else {
                score_total(a, &s.entities, &cfg.gammas, cfg.semantics)
            }
        })
        .collect()
}

fn break_tie(tied: &[usize], batch: &Batch, policy: TiePolicy, rng: &mut ChaCha8Rng) -> usize {
    match policy {
        _ if tied.len() == 1 => tied[0],
        TiePolicy::LowestId => *tied.iter().min_by_key(|&&j| &batch.samples[j].id).unwrap(),
        TiePolicy::SeededRandom => {
            let mut sorted = tied.to_vec();
            sorted.sort_by_key(|&j| &batch.samples[j].id);
            sorted[rng.random_range(0..sorted.len())]
        }
    }
}

/// Best candidate by `better`, restricted to `allowed`.
fn select_by(
    row: &[f64],
    allowed: impl Fn(usize, f64) -> bool,
    better: impl Fn(f64, f64) -> bool,
    batch: &Batch,
    policy: TiePolicy,
    rng: &mut ChaCha8Rng,
) -> Option<Pick> {
    let mut best: Option<f64> = None;
    let mut tied = Vec::new();
    for (j, &s) in row.iter().enumerate() {
        if s.is_nan() || !allowed(j, s) {
            continue;
        }
        match best {
            Some(b) if s == b => tied.push(j),
            Some(b) if !better(s, b) => {}
            _ => {
                best = Some(s);
                tied.clear();
                tied.push(j);
            }
        }
    }
    let score = best?;
    Some(Pick {
        index: break_tie(&tied, batch, policy, rng),
        score,
    })
}

fn positive_from_row(row: &[f64], batch: &Batch, cfg: &MinerConfig, rng: &mut ChaCha8Rng) -> Option<Pick> {
    select_by(row, |_, _| true, |s, b| s > b, batch, cfg.tie_policy, rng)
}

fn negative_from_row(
    row: &[f64],
    exclude: usize,
    band: (f64, f64),
    batch: &Batch,
    cfg: &MinerConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Pick> {
    select_by(
        row,
        |j, s| j != exclude && band.0 <= s && s <= band.1,
        |s, b| s < b,
        batch,
        cfg.tie_policy,
        rng,
    )
}

/// Highest-scoring other sample. `None` only when the batch has fewer than
/// two samples.
pub fn select_positive(anchor: usize, batch: &Batch, cfg: &MinerConfig, rng: &mut ChaCha8Rng) -> Option<Pick> {
    positive_from_row(&score_row(anchor, batch, cfg), batch, cfg, rng)
}

/// Lowest-scoring sample other than anchor and `exclude` (the positive) whose
/// score lies in `[tau_min, tau_max]`, bounds inclusive.
pub fn select_negative(
    anchor: usize,
    batch: &Batch,
    cfg: &MinerConfig,
    exclude: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Pick> {
    let row = score_row(anchor, batch, cfg);
    negative_from_row(&row, exclude, (cfg.tau_min, cfg.tau_max), batch, cfg, rng)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub anchors: usize,
    pub no_positive: usize,
    pub no_negative: usize,
    pub emitted: usize,
}

/// Mine one batch, seeded by `cfg.seed`.
pub fn mine_batch_with_stats(batch: &Batch, cfg: &MinerConfig) -> (Vec<Triplet>, BatchStats) {
    let mut stats = BatchStats::default();
    let mut out = Vec::new();
    if batch.len() < 3 {
        return (out, stats);
    }
    let mut rng = rng(cfg.seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.shuffle(&mut rng);
    for anchor in order {
        stats.anchors += 1;
        let row = score_row(anchor, batch, cfg);
        let pos = match positive_from_row(&row, batch, cfg, &mut rng) {
            Some(p) if p.score > 0.0 => p,
            _ => {
                stats.no_positive += 1;
                continue;
            }
        };
        let semi_hard = cfg.semi_hard_fraction >= 1.0 || rng.random::<f64>() < cfg.semi_hard_fraction;
        let band = if semi_hard {
            (cfg.tau_min, cfg.tau_max)
        } else {
            (0.0, cfg.tau_max)
        };
        let Some(neg) = negative_from_row(&row, pos.index, band, batch, cfg, &mut rng) else {
            stats.no_negative += 1;
            continue;
        };
        stats.emitted += 1;
        out.push(Triplet {
            anchor_id: batch.samples[anchor].id.clone(),
            positive_id: batch.samples[pos.index].id.clone(),
            negative_id: batch.samples[neg.index].id.clone(),
            score_ap: pos.score,
            score_an: neg.score,
        });
    }
    (out, stats)
}

pub fn mine_batch(batch: &Batch, cfg: &MinerConfig) -> Vec<Triplet> {
    mine_batch_with_stats(batch, cfg).0
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineCounts {
    pub triplets: usize,
    pub passes: usize,
    pub batches: usize,
    pub duplicates_dropped: usize,
    pub reached_target: bool,
}

#[derive(Debug, Clone)]
pub struct MineOutcome {
    /// Unique triplets sorted by `(anchor, positive, negative)`.
    pub triplets: Vec<Triplet>,
    pub counts: MineCounts,
}

/// Mine a corpus into a fixed pool of unique triplets.
///
/// Each pass shuffles the corpus and cuts it into full batches of `k`; the
/// remainder sits out that pass. Batches are mined in parallel, then merged in
/// batch order, so the result depends only on the inputs and `cfg.seed`.
pub fn mine_corpus(
    samples: &[Sample],
    k: usize,
    target: usize,
    cfg: &MinerConfig,
    max_passes: usize,
) -> Result<MineOutcome> {
    cfg.validate()?;
    if k < 3 {
        return Err(Error::Validation(format!("batch size must be at least 3, got {k}")));
    }
    if samples.len() < k {
        return Err(Error::Validation(format!(
            "corpus has {} samples, fewer than the batch size {k}",
            samples.len()
        )));
    }
    Batch::new(samples.to_vec())?;

    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut kept = Vec::new();
    let mut counts = MineCounts::default();
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    while kept.len() < target && counts.passes < max_passes {
        let pass = counts.passes as u64;
        counts.passes += 1;
        indices.sort_unstable();
        indices.shuffle(&mut rng(derive_seed(cfg.seed, pass << 32)));
        let mined: Vec<Vec<Triplet>> = indices
            .chunks_exact(k)
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(b, chunk)| {
                let batch = Batch {
                    samples: chunk.iter().map(|&i| samples[i].clone()).collect(),
                };
                let batch_cfg = MinerConfig {
                    seed: derive_seed(cfg.seed, (pass << 32) | (b as u64 + 1)),
                    ..cfg.clone()
                };
                mine_batch(&batch, &batch_cfg)
            })
            .collect();
        counts.batches += mined.len();
        'merge: for triplets in mined {
            for t in triplets {
                if kept.len() >= target {
                    break 'merge;
                }
                let key = (t.anchor_id.clone(), t.positive_id.clone(), t.negative_id.clone());
                if seen.insert(key) {
                    kept.push(t);
                } else {
                    counts.duplicates_dropped += 1;
                }
            }
        }
    }
    kept.sort_by(|a, b| a.key().cmp(&b.key()));
    counts.triplets = kept.len();
    counts.reached_target = kept.len() >= target;
    Ok(MineOutcome { triplets: kept, counts })
}
