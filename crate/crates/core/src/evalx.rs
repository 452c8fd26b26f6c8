//! Retrieval precision and zero-shot classification metrics.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::Modality;
use crate::error::{Error, Result};
use crate::ober::MetaEntities;
use crate::ontology::Ontology;
use crate::scoring::jaccard;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub id: String,
    pub vector: Vec<f64>,
    pub entities: MetaEntities,
}

/// Embeddings of one modality with their meta-entities; vectors are stored unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    modality: Modality,
    entries: Vec<GalleryEntry>,
    unit: Vec<Vec<f64>>,
}

fn normalized(v: &[f64], id: &str) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::DegenerateVector(format!("embedding of `{id}` has norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Gallery {
    pub fn new(modality: Modality, entries: Vec<GalleryEntry>) -> Result<Gallery> {
        if entries.is_empty() {
            return Err(Error::Validation("gallery is empty".into()));
        }
        let dim = entries[0].vector.len();
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate gallery id `{}`", e.id)));
            }
            if e.vector.len() != dim {
                return Err(Error::Dimension(format!(
                    "gallery entry `{}` has length {}, expected {dim}",
                    e.id,
                    e.vector.len()
                )));
            }
        }
        let unit = entries.iter().map(|e| normalized(&e.vector, &e.id)).collect::<Result<_>>()?;
        Ok(Gallery {
            modality,
            entries,
            unit,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].vector.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// `(gallery index, cosine)`, best first.
    pub ranked: Vec<(usize, f64)>,
    /// Fewer than `r` candidates were available.
    pub truncated: bool,
}

/// Top-`r` gallery entries by cosine, ties by ascending id.
pub fn retrieve(query: &[f64], gallery: &Gallery, r: usize, exclude: Option<&str>) -> Result<Retrieval> {
    if r == 0 {
        return Err(Error::Validation("retrieval depth must be at least 1".into()));
    }
    if query.len() != gallery.dim() {
        return Err(Error::Dimension(format!(
            "query length {} against gallery dimension {}",
            query.len(),
            gallery.dim()
        )));
    }
    let q = normalized(query, "query")?;
    let mut scored: Vec<(usize, f64)> = gallery
        .unit
        .iter()
        .enumerate()
        .filter(|(i, _)| exclude != Some(gallery.entries[*i].id.as_str()))
        .map(|(i, u)| (i, dot(&q, u)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| gallery.entries[a.0].id.cmp(&gallery.entries[b.0].id))
    });
    let truncated = scored.len() < r;
    scored.truncate(r);
    Ok(Retrieval {
        ranked: scored,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Disease,
    Adjective,
    Direction,
}

impl EntityKind {
    pub const ALL: [EntityKind; 3] = [EntityKind::Disease, EntityKind::Adjective, EntityKind::Direction];

    pub fn labels<'a>(&self, me: &'a MetaEntities) -> BTreeSet<&'a str> {
        match self {
            EntityKind::Disease => me.diseases(),
            EntityKind::Adjective => me.adjectives(),
            EntityKind::Direction => me.directions(),
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Disease => "disease",
            EntityKind::Adjective => "adjective",
            EntityKind::Direction => "direction",
        })
    }
}

/// How one retrieved item's label set counts against the query's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    /// Jaccard index of the two sets.
    #[default]
    Jaccard,
    /// 1 when the sets are equal and non-empty, else 0.
    Exact,
}

impl FromStr for Consistency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jaccard" => Ok(Consistency::Jaccard),
            "exact" => Ok(Consistency::Exact),
            _ => Err(Error::Validation(format!("unknown consistency mode `{s}` (expected jaccard or exact)"))),
        }
    }
}

impl fmt::Display for Consistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Consistency::Jaccard => "jaccard",
            Consistency::Exact => "exact",
        })
    }
}

/// Mean consistency of the retrieved items with the query, as a percentage.
pub fn precision_at_r(query: &MetaEntities, retrieved: &[&MetaEntities], kind: EntityKind, mode: Consistency) -> Result<f64> {
    if retrieved.is_empty() {
        return Err(Error::Validation("precision over an empty retrieval".into()));
    }
    let q = kind.labels(query);
    let sum: f64 = retrieved
        .iter()
        .map(|item| {
            let s = kind.labels(item);
            match mode {
                Consistency::Jaccard => jaccard(&q, &s),
                Consistency::Exact => f64::from(u8::from(!q.is_empty() && q == s)),
            }
        })
        .sum();
    Ok(100.0 * sum / retrieved.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrievalTask {
    I2I,
    I2T,
    T2I,
    T2T,
}

impl RetrievalTask {
    pub const ALL: [RetrievalTask; 4] = [RetrievalTask::I2I, RetrievalTask::I2T, RetrievalTask::T2I, RetrievalTask::T2T];

    pub fn modalities(&self) -> (Modality, Modality) {
        match self {
            RetrievalTask::I2I => (Modality::Image, Modality::Image),
            RetrievalTask::I2T => (Modality::Image, Modality::Text),
            RetrievalTask::T2I => (Modality::Text, Modality::Image),
            RetrievalTask::T2T => (Modality::Text, Modality::Text),
        }
    }

    pub fn within_modal(&self) -> bool {
        let (q, g) = self.modalities();
        q == g
    }
}

impl fmt::Display for RetrievalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    pub task: RetrievalTask,
    pub kind: EntityKind,
    pub r: usize,
    pub precision: f64,
    /// Some query had fewer than `r` candidates.
    pub truncated: bool,
}

/// P@R for each task, entity kind and depth, averaged over all queries.
/// Both galleries must hold the same ids; a query never retrieves itself in
/// the within-modal tasks.
pub fn evaluate_retrieval(
    images: &Gallery,
    texts: &Gallery,
    depths: &[usize],
    tasks: &[RetrievalTask],
    mode: Consistency,
) -> Result<Vec<PrecisionRow>> {
    let pick = |m: Modality| match m {
        Modality::Image => images,
        Modality::Text => texts,
    };
    let max_r = depths.iter().copied().max().ok_or_else(|| Error::Validation("no retrieval depths".into()))?;
    let mut rows = Vec::new();
    for &task in tasks {
        let (qm, gm) = task.modalities();
        let (qg, gg) = (pick(qm), pick(gm));
        let per_query: Vec<(Retrieval, usize)> = qg
            .entries()
            .par_iter()
            .enumerate()
            .map(|(qi, q)| {
                let exclude = task.within_modal().then_some(q.id.as_str());
                retrieve(&q.vector, gg, max_r, exclude).map(|res| (res, qi))
            })
            .collect::<Result<_>>()?;
        for kind in EntityKind::ALL {
            for &r in depths {
                let mut sum = 0.0;
                let mut truncated = false;
                for (res, qi) in &per_query {
                    let top: Vec<&MetaEntities> =
                        res.ranked.iter().take(r).map(|&(gi, _)| &gg.entries()[gi].entities).collect();
                    truncated |= top.len() < r;
                    sum += precision_at_r(&qg.entries()[*qi].entities, &top, kind, mode)?;
                }
                rows.push(PrecisionRow {
                    task,
                    kind,
                    r,
                    precision: sum / per_query.len() as f64,
                    truncated,
                });
            }
        }
    }
    Ok(rows)
}

pub fn prompt_text(disease: &str) -> String {
    format!("This is an X-Ray image of {disease}.")
}

/// Prompt for a canonical disease label of the ontology.
pub fn build_prompt(disease: &str, ont: &Ontology) -> Result<String> {
    if disease.trim().is_empty() {
        return Err(Error::Validation("empty disease label".into()));
    }
    if !ont.has_disease(disease) {
        return Err(Error::Validation(format!("`{disease}` is not a disease of the ontology")));
    }
    Ok(prompt_text(disease))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub predicted: usize,
    /// Cosine to each class prompt, in prompt order.
    pub scores: Vec<f64>,
}

/// Argmax cosine over class prompts; ties go to the smallest class label.
pub fn zero_shot_classify(image: &[f64], prompts: &[(String, Vec<f64>)]) -> Result<Classification> {
    if prompts.len() < 2 {
        return Err(Error::Validation("zero-shot classification needs at least two classes".into()));
    }
    let scores = prompts
        .iter()
        .map(|(_, e)| crate::align::cosine(image, e))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for i in 1..prompts.len() {
        let better = scores[i] > scores[best] || (scores[i] == scores[best] && prompts[i].0 < prompts[best].0);
        if better {
            best = i;
        }
    }
    Ok(Classification {
        predicted: best,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Percent correct.
    pub accuracy: f64,
    /// Macro-averaged F1, percent.
    pub macro_f1: f64,
    /// Macro-averaged one-vs-rest ROC AUC in `[0, 1]`.
    pub macro_auc: f64,
    /// Classes left out of the macro averages because no truth label names them.
    pub absent_classes: Vec<usize>,
}

/// Area under the ROC curve via the rank-sum statistic, ties counted half.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn classification_metrics(
    predictions: &[usize],
    truths: &[usize],
    scores: &[Vec<f64>],
    n_classes: usize,
) -> Result<ClassMetrics> {
    if predictions.len() != truths.len() || scores.len() != truths.len() || truths.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} truths, {} score vectors",
            predictions.len(),
            truths.len(),
            scores.len()
        )));
    }
    if predictions.iter().chain(truths).any(|&c| c >= n_classes) || scores.iter().any(|s| s.len() != n_classes) {
        return Err(Error::Dimension(format!("class indices and score vectors must cover {n_classes} classes")));
    }
    let present: Vec<usize> = (0..n_classes).filter(|c| truths.contains(c)).collect();
    if present.len() < 2 {
        return Err(Error::Validation("at least two classes must occur in the truth labels".into()));
    }
    let absent_classes = (0..n_classes).filter(|c| !present.contains(c)).collect();
    let n = truths.len() as f64;
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();

    let mut f1_sum = 0.0;
    let mut auc_sum = 0.0;
    for &c in &present {
        let tp = predictions.iter().zip(truths).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let fp = predictions.iter().zip(truths).filter(|&(&p, &t)| p == c && t != c).count() as f64;
        let fn_ = predictions.iter().zip(truths).filter(|&(&p, &t)| p != c && t == c).count() as f64;
        f1_sum += 2.0 * tp / (2.0 * tp + fp + fn_);
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = truths.iter().map(|&t| t == c).collect();
        auc_sum += rank_auc(&col, &pos).expect("class present with at least one other class");
    }
    let k = present.len() as f64;
    Ok(ClassMetrics {
        accuracy: 100.0 * correct as f64 / n,
        macro_f1: 100.0 * f1_sum / k,
        macro_auc: auc_sum / k,
        absent_classes,
    })
}
