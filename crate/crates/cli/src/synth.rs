//! Synthetic paired image/report corpora with known meta-entities.
//!
//! Images are tile-periodic: every 8×8 tile carries one cosine grating per
//! disease (orientation and frequency identify the disease, amplitude the
//! adjective) plus a bright 2×2 marker whose place in the tile gives the
//! direction. Pixel noise is added on top. Reports name each disease with
//! its adjective and direction through one of a few sentence templates,
//! padded with finding-free filler sentences.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use metatrip_core::embed::{write_pgm, ImageSample};
use metatrip_core::ober::{DiseaseEntry, MetaEntities};
use metatrip_core::ontology::Ontology;
use metatrip_core::records::{to_jsonl, CorpusRecord, SCHEMA_VERSION};
use metatrip_core::seed::{derive_seed, rng};
use metatrip_core::{Error, Result};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const TILE: usize = 8;

/// Gratings `(fx, fy)` in cycles per tile, one per class slot.
const FREQUENCIES: [(f64, f64); 12] = [
    (1.0, 0.0),
    (0.0, 1.0),
    (1.0, 1.0),
    (1.0, -1.0),
    (2.0, 0.0),
    (0.0, 2.0),
    (2.0, 1.0),
    (1.0, 2.0),
    (2.0, -1.0),
    (1.0, -2.0),
    (2.0, 2.0),
    (2.0, -2.0),
];

pub const DEFAULT_CLASSES: [&str; 8] = [
    "pleural effusion",
    "pneumonia",
    "pneumothorax",
    "cardiomegaly",
    "edema",
    "atelectasis",
    "consolidation",
    "fracture",
];

const TEMPLATES: [&str; 3] = [
    "There is {adj} {dir} {disease}.",
    "{Adj} {disease} is seen on the {dir} side.",
    "Findings are consistent with {adj} {dir} {disease}.",
];

const FILLERS: [&str; 4] = [
    "The heart size is normal.",
    "No bony abnormality is identified.",
    "The trachea is midline.",
    "Compared with the previous study, the lines are unchanged.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Disease labels, one per class.
    pub classes: Vec<String>,
    pub train_per_class: usize,
    pub heldout_per_class: usize,
    pub adjectives: Vec<String>,
    pub directions: Vec<String>,
    /// Probability that a training report names a second class.
    pub overlap_rate: f64,
    pub heldout_overlap_rate: f64,
    /// Side length in pixels; a multiple of 8.
    pub image_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: DEFAULT_CLASSES[..4].iter().map(|s| s.to_string()).collect(),
            train_per_class: 50,
            heldout_per_class: 12,
            adjectives: ["mild", "moderate", "severe"].map(String::from).to_vec(),
            directions: ["left", "right", "upper", "lower"].map(String::from).to_vec(),
            overlap_rate: 0.5,
            heldout_overlap_rate: 0.0,
            image_size: 32,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The first `n` default classes.
    pub fn with_class_count(n: usize) -> Result<SyntheticSpec> {
        if !(2..=DEFAULT_CLASSES.len()).contains(&n) {
            return Err(Error::Validation(format!(
                "class count must lie in 2..={}, got {n}",
                DEFAULT_CLASSES.len()
            )));
        }
        Ok(SyntheticSpec {
            classes: DEFAULT_CLASSES[..n].iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        })
    }

    pub fn validate(&self, ont: &Ontology) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.classes.len() < 2 || self.classes.len() > FREQUENCIES.len() {
            return fail(format!("class count must lie in 2..={}, got {}", FREQUENCIES.len(), self.classes.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.classes {
            if !ont.has_disease(c) {
                return fail(format!("class `{c}` is not a disease of the ontology"));
            }
            if !seen.insert(c) {
                return fail(format!("class `{c}` listed twice"));
            }
        }
        for a in &self.adjectives {
            if !ont.adjectives().iter().any(|s| s.canonical() == a) {
                return fail(format!("`{a}` is not an adjective of the ontology"));
            }
        }
        for d in &self.directions {
            if !ont.directions().iter().any(|s| s.canonical() == d) {
                return fail(format!("`{d}` is not a direction of the ontology"));
            }
        }
        if self.adjectives.is_empty() || self.directions.is_empty() || self.directions.len() > 4 {
            return fail("need at least one adjective and one to four directions".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_rate) || !(0.0..=1.0).contains(&self.heldout_overlap_rate) {
            return fail("overlap rates must lie in [0, 1]".into());
        }
        if self.image_size == 0 || self.image_size % TILE != 0 {
            return fail(format!("image_size must be a positive multiple of {TILE}"));
        }
        if !(self.noise >= 0.0) {
            return fail("noise must be non-negative".into());
        }
        if self.train_per_class == 0 {
            return fail("train_per_class must be positive".into());
        }
        Ok(())
    }
}

/// Ground truth for one generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub schema: u32,
    pub id: String,
    pub split: String,
    pub class: String,
    pub entries: Vec<DiseaseEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub record: CorpusRecord,
    pub image: ImageSample,
    pub label: LabelRecord,
}

/// In-memory synthetic corpus, train split first.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<SyntheticSample>,
    pub heldout: Vec<SyntheticSample>,
}

struct Finding {
    class: usize,
    adj: usize,
    dir: usize,
}

fn marker_origin(dir: usize) -> (usize, usize) {
    // left, right, upper, lower in listing order
    [(3, 0), (3, 6), (0, 3), (6, 3)][dir]
}

fn render_image(findings: &[Finding], spec: &SyntheticSpec, r: &mut ChaCha8Rng) -> ImageSample {
    let mut tile = [[0.2f64; TILE]; TILE];
    for f in findings {
        let (fx, fy) = FREQUENCIES[f.class];
        let amp = 0.1 + 0.25 * (f.adj + 1) as f64 / spec.adjectives.len() as f64;
        for (y, row) in tile.iter_mut().enumerate() {
            for (x, px) in row.iter_mut().enumerate() {
                *px += amp * (2.0 * PI * (fx * x as f64 + fy * y as f64) / TILE as f64).cos();
            }
        }
        let (my, mx) = marker_origin(f.dir);
        for row in tile.iter_mut().skip(my).take(2) {
            for px in row.iter_mut().skip(mx).take(2) {
                *px += 0.3;
            }
        }
    }
    let n = spec.image_size;
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let pixels = (0..n * n)
        .map(|i| {
            let (y, x) = (i / n, i % n);
            let noise = if spec.noise > 0.0 { normal.sample(r) } else { 0.0 };
            (tile[y % TILE][x % TILE] + noise).clamp(0.0, 1.0)
        })
        .collect();
    ImageSample::new(n, n, pixels).expect("square image")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn render_report(findings: &[Finding], spec: &SyntheticSpec, r: &mut ChaCha8Rng) -> String {
    let mut sentences: Vec<String> = findings
        .iter()
        .map(|f| {
            let t = TEMPLATES.choose(r).expect("templates");
            let adj = &spec.adjectives[f.adj];
            t.replace("{Adj}", &capitalize(adj))
                .replace("{adj}", adj)
                .replace("{dir}", &spec.directions[f.dir])
                .replace("{disease}", &spec.classes[f.class])
        })
        .collect();
    let fillers = r.random_range(0..=2);
    for _ in 0..fillers {
        let at = r.random_range(0..=sentences.len());
        sentences.insert(at, FILLERS.choose(r).expect("fillers").to_string());
    }
    sentences.join(" ")
}

fn generate_split(spec: &SyntheticSpec, split: &str, per_class: usize, overlap: f64, stream: u64) -> Vec<SyntheticSample> {
    let mut r = rng(derive_seed(spec.seed, stream));
    let k = spec.classes.len();
    let mut out = Vec::with_capacity(per_class * k);
    for i in 0..per_class * k {
        let class = i / per_class;
        let mut findings = vec![Finding {
            class,
            adj: r.random_range(0..spec.adjectives.len()),
            dir: r.random_range(0..spec.directions.len()),
        }];
        if r.random::<f64>() < overlap {
            let other = (class + r.random_range(1..k)) % k;
            findings.push(Finding {
                class: other,
                adj: r.random_range(0..spec.adjectives.len()),
                dir: r.random_range(0..spec.directions.len()),
            });
        }
        let id = format!("{split}-{i:04}");
        let text = render_report(&findings, spec, &mut r);
        let image = render_image(&findings, spec, &mut r);
        let entities = MetaEntities::from(
            findings
                .iter()
                .map(|f| {
                    DiseaseEntry::new(
                        &spec.classes[f.class],
                        &[spec.adjectives[f.adj].as_str()],
                        &[spec.directions[f.dir].as_str()],
                    )
                })
                .collect::<Vec<_>>(),
        );
        out.push(SyntheticSample {
            record: CorpusRecord::new(&id, text, format!("images/{id}.pgm")),
            image,
            label: LabelRecord {
                schema: SCHEMA_VERSION,
                id,
                split: split.into(),
                class: spec.classes[class].clone(),
                entries: entities.entries().to_vec(),
            },
        });
    }
    out
}

pub fn generate(spec: &SyntheticSpec, ont: &Ontology) -> Result<SyntheticCorpus> {
    spec.validate(ont)?;
    Ok(SyntheticCorpus {
        train: generate_split(spec, "train", spec.train_per_class, spec.overlap_rate, 1),
        heldout: generate_split(spec, "heldout", spec.heldout_per_class, spec.heldout_overlap_rate, 2),
    })
}

/// Paths written by [`write_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub train: std::path::PathBuf,
    pub heldout: std::path::PathBuf,
    pub labels: std::path::PathBuf,
}

/// Writes `train.jsonl`, `heldout.jsonl`, `labels.jsonl` and `images/*.pgm` under `dir`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<SynthPaths> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let all = corpus.train.iter().chain(&corpus.heldout);
    let mut labels = Vec::new();
    for s in all {
        write_pgm(&s.image, &dir.join(&s.record.image))?;
        labels.push(s.label.clone());
    }
    let paths = SynthPaths {
        train: dir.join("train.jsonl"),
        heldout: dir.join("heldout.jsonl"),
        labels: dir.join("labels.jsonl"),
    };
    let split_records = |v: &[SyntheticSample]| v.iter().map(|s| s.record.clone()).collect::<Vec<_>>();
    let writes: BTreeMap<&Path, String> = [
        (paths.train.as_path(), to_jsonl(&split_records(&corpus.train))?),
        (paths.heldout.as_path(), to_jsonl(&split_records(&corpus.heldout))?),
        (paths.labels.as_path(), to_jsonl(&labels)?),
    ]
    .into_iter()
    .collect();
    for (p, text) in writes {
        fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(paths)
}
