//! Hierarchical meta-entity similarity.
//!
//! For meta-entities `mi`, `mj` with disease sets `Di`, `Dj`:
//!
//! ```text
//! score = δ(Di ∩ Dj) / |Di ∪ Dj| · Σ_{q ∈ Di ∩ Dj} (g0 + g1·JIadj(q) + g2·JIdir(q))
//!                                                / (g0 + g1·δadj(q) + g2·δdir(q))
//! ```
//!
//! `δadj(q)` is 1 when the union (default) or the intersection of the two
//! adjective sets of disease `q` is non-empty, selected by [`DeltaSemantics`].
//! With intersection semantics a full descriptor mismatch scores the same as
//! a perfect match, which is why union is the default.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ober::MetaEntities;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaWeights {
    g0: f64,
    g1: f64,
    g2: f64,
}

impl Default for GammaWeights {
    fn default() -> Self {
        GammaWeights {
            g0: 0.85,
            g1: 0.1,
            g2: 0.05,
        }
    }
}

impl GammaWeights {
    pub fn new(g0: f64, g1: f64, g2: f64) -> Result<GammaWeights> {
        if [g0, g1, g2].iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Validation(format!("gamma weights must be non-negative, got ({g0}, {g1}, {g2})")));
        }
        if (g0 + g1 + g2 - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("gamma weights must sum to 1, got ({g0}, {g1}, {g2})")));
        }
        Ok(GammaWeights { g0, g1, g2 })
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn g1(&self) -> f64 {
        self.g1
    }

    pub fn g2(&self) -> f64 {
        self.g2
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaSemantics {
    #[default]
    Union,
    Intersection,
}

impl FromStr for DeltaSemantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(DeltaSemantics::Union),
            "intersection" => Ok(DeltaSemantics::Intersection),
            other => Err(Error::Validation(format!("unknown delta semantics `{other}`"))),
        }
    }
}

impl fmt::Display for DeltaSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeltaSemantics::Union => "union",
            DeltaSemantics::Intersection => "intersection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedDisease {
    pub disease: String,
    pub ji_adj: f64,
    pub ji_dir: f64,
    pub summand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub shared_diseases: Vec<SharedDisease>,
    pub prefactor: f64,
    pub total: f64,
}

fn overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> (usize, usize) {
    let inter = a.intersection(b).count();
    (inter, a.len() + b.len() - inter)
}

/// `|a ∩ b| / |a ∪ b|`, with `jaccard(∅, ∅) = 0`.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    match overlap(a, b) {
        (_, 0) => 0.0,
        (inter, union) => inter as f64 / union as f64,
    }
}

fn delta<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>, semantics: DeltaSemantics) -> f64 {
    let (inter, union) = overlap(a, b);
    let nonempty = match semantics {
        DeltaSemantics::Union => union > 0,
        DeltaSemantics::Intersection => inter > 0,
    };
    if nonempty {
        1.0
    } else {
        0.0
    }
}

pub fn score(mi: &MetaEntities, mj: &MetaEntities, w: &GammaWeights, semantics: DeltaSemantics) -> ScoreBreakdown {
    let di = mi.diseases();
    let dj = mj.diseases();
    let (inter, union) = overlap(&di, &dj);
    if inter == 0 {
        return ScoreBreakdown {
            shared_diseases: Vec::new(),
            prefactor: 0.0,
            total: 0.0,
        };
    }
    let shared_diseases: Vec<SharedDisease> = di
        .intersection(&dj)
        .map(|&d| {
            let (ei, ej) = (mi.get(d).unwrap(), mj.get(d).unwrap());
            let ji_adj = jaccard(&ei.adj, &ej.adj);
            let ji_dir = jaccard(&ei.dir, &ej.dir);
            let num = w.g0 + w.g1 * ji_adj + w.g2 * ji_dir;
            let den = w.g0 + w.g1 * delta(&ei.adj, &ej.adj, semantics) + w.g2 * delta(&ei.dir, &ej.dir, semantics);
            SharedDisease {
                disease: d.to_string(),
                ji_adj,
                ji_dir,
                summand: num / den,
            }
        })
        .collect();
    let sum: f64 = shared_diseases.iter().map(|s| s.summand).sum();
    ScoreBreakdown {
        shared_diseases,
        prefactor: 1.0 / union as f64,
        // division rather than prefactor * sum keeps self-scores exactly 1
        total: sum / union as f64,
    }
}

/// Total score only.
pub fn score_total(mi: &MetaEntities, mj: &MetaEntities, w: &GammaWeights, semantics: DeltaSemantics) -> f64 {
    score(mi, mj, w, semantics).total
}
