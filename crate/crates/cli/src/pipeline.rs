//! Stage functions and the resumable pipeline runner.
//!
//! Artifacts in the output directory:
//!
//! | stage   | files                                                     |
//! |---------|-----------------------------------------------------------|
//! | extract | `train.entities.jsonl`, `eval.entities.jsonl`             |
//! | mine    | `triplets.jsonl`                                          |
//! | train   | `checkpoint.bin`, `loss.jsonl`, `train.manifest.json`     |
//! | eval    | `eval.json`                                               |
//!
//! Each stage also leaves `<stage>.stage.json`, holding its manifest and the
//! hashes of what it wrote. A stage whose manifest and outputs are unchanged
//! is skipped unless forced.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use metatrip_core::align::{train, AdamState, EpochLoss, FeatureTable};
use metatrip_core::checkpoint;
use metatrip_core::embed::{Encoders, Heads, Input, Modality, TokenSequence};
use metatrip_core::evalx::{
    build_prompt, classification_metrics, evaluate_retrieval, zero_shot_classify, ClassMetrics, Consistency, Gallery,
    GalleryEntry, PrecisionRow, RetrievalTask,
};
use metatrip_core::miner::{mine_corpus, MineCounts, Sample, Triplet};
use metatrip_core::ober::extract;
use metatrip_core::ontology::Ontology;
use metatrip_core::records::{
    read_entities, read_triplets, render_entities, render_triplets, sha256_file, sha256_hex, to_jsonl, CorpusRecord,
    EntityRecord, Manifest,
};
use metatrip_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{ingest, Corpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extract,
    Mine,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Extract, Stage::Mine, Stage::Train, Stage::Eval];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Mine => "mine",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage `{s}` (expected extract, mine, train or eval)")))
    }
}

pub const TRAIN_ENTITIES: &str = "train.entities.jsonl";
pub const EVAL_ENTITIES: &str = "eval.entities.jsonl";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LOSS_CURVE: &str = "loss.jsonl";
pub const TRAIN_MANIFEST: &str = "train.manifest.json";
pub const EVAL_REPORT: &str = "eval.json";
const LOCK: &str = ".metatrip.lock";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_ontology(path: Option<&Path>) -> Result<Ontology> {
    match path {
        Some(p) => Ontology::load(p),
        None => Ok(Ontology::default_ontology()),
    }
}

/// Hash of the canonical serialization, so equivalent files hash alike.
pub fn ontology_hash(ont: &Ontology) -> String {
    sha256_hex(ont.serialize().as_bytes())
}

/// Hash over every record's image file, in corpus order.
pub fn images_hash(corpus: &Corpus) -> Result<String> {
    let lines: Vec<String> = corpus
        .records()
        .par_iter()
        .map(|r| Ok(format!("{}\t{}\n", r.id, sha256_file(&corpus.image_path(r))?)))
        .collect::<Result<_>>()?;
    Ok(sha256_hex(lines.concat().as_bytes()))
}

fn corpus_inputs(corpus: &Corpus, name: &str, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    inputs.insert(format!("{name}.corpus"), sha256_file(&corpus.path)?);
    inputs.insert(format!("{name}.images"), images_hash(corpus)?);
    Ok(())
}

pub fn extract_records(records: &[CorpusRecord], ont: &Ontology) -> Vec<EntityRecord> {
    records
        .par_iter()
        .map(|r| EntityRecord::new(&r.id, &extract(&r.report(), ont)))
        .collect()
}

pub fn mining_samples(entities: &[EntityRecord]) -> Vec<Sample> {
    entities
        .iter()
        .map(|e| Sample {
            id: e.id.clone(),
            entities: e.entities(),
        })
        .collect()
}

/// Trunk features for every corpus record.
pub fn compute_features(corpus: &Corpus, enc: &Encoders) -> Result<FeatureTable> {
    let cfg = &enc.image.cfg;
    let rows: Vec<(String, Vec<f64>, Vec<f64>)> = corpus
        .records()
        .par_iter()
        .map(|r| {
            let img = corpus.image(r)?;
            let image = enc.features(Input::Image(&img))?;
            let text = enc.features(Input::Text(&TokenSequence::from_text(&r.text, cfg)))?;
            Ok((r.id.clone(), image, text))
        })
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::new();
    for (id, image, text) in rows {
        table.insert(id, image, text);
    }
    Ok(table)
}

/// Projected image and text galleries for the records that have entities.
pub fn build_galleries(entities: &[EntityRecord], features: &FeatureTable, heads: &Heads) -> Result<(Gallery, Gallery)> {
    let mut images = Vec::with_capacity(entities.len());
    let mut texts = Vec::with_capacity(entities.len());
    for e in entities {
        let me = e.entities();
        let g_img = features.image(&e.id)?;
        let g_txt = features.text(&e.id)?;
        images.push(GalleryEntry {
            id: e.id.clone(),
            vector: heads.image.w.dot(&g_img).to_vec(),
            entities: me.clone(),
        });
        texts.push(GalleryEntry {
            id: e.id.clone(),
            vector: heads.text.w.dot(&g_txt).to_vec(),
            entities: me,
        });
    }
    Ok((Gallery::new(Modality::Image, images)?, Gallery::new(Modality::Text, texts)?))
}

pub fn retrieval_table(
    entities: &[EntityRecord],
    features: &FeatureTable,
    heads: &Heads,
    depths: &[usize],
    mode: Consistency,
) -> Result<Vec<PrecisionRow>> {
    let (images, texts) = build_galleries(entities, features, heads)?;
    evaluate_retrieval(&images, &texts, depths, &RetrievalTask::ALL, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    pub evaluated: usize,
    /// Samples with zero or several diseases, left out.
    pub skipped: usize,
    pub metrics: ClassMetrics,
}

/// Zero-shot disease classification of single-disease samples against
/// prompts for every disease occurring among them.
pub fn zero_shot_report(
    entities: &[EntityRecord],
    features: &FeatureTable,
    enc: &Encoders,
    heads: &Heads,
    ont: &Ontology,
) -> Result<ClassificationReport> {
    let single: Vec<(&EntityRecord, String)> = entities
        .iter()
        .filter_map(|e| match e.entries.as_slice() {
            [only] => Some((e, only.disease.clone())),
            _ => None,
        })
        .collect();
    let classes: Vec<String> = single
        .iter()
        .map(|(_, d)| d.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::Validation(format!(
            "zero-shot classification needs two classes among single-disease samples, found {}",
            classes.len()
        )));
    }
    let cfg = &enc.text.cfg;
    let prompts = classes
        .iter()
        .map(|c| {
            let seq = TokenSequence::from_text(&build_prompt(c, ont)?, cfg);
            let g = enc.features(Input::Text(&seq))?;
            Ok((c.clone(), heads.text.apply(&g)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut predictions = Vec::with_capacity(single.len());
    let mut truths = Vec::with_capacity(single.len());
    let mut scores = Vec::with_capacity(single.len());
    for (e, disease) in &single {
        let g = features.image(&e.id)?;
        let emb = heads.image.w.dot(&g).to_vec();
        let c = zero_shot_classify(&emb, &prompts)?;
        predictions.push(c.predicted);
        truths.push(classes.iter().position(|x| x == disease).expect("class listed"));
        scores.push(c.scores);
    }
    Ok(ClassificationReport {
        evaluated: single.len(),
        skipped: entities.len() - single.len(),
        metrics: classification_metrics(&predictions, &truths, &scores, classes.len())?,
        classes,
    })
}

/// Trunk init, cached features and head training in one call.
pub struct Trained {
    pub encoders: Encoders,
    pub optimizer: AdamState,
    pub curve: Vec<EpochLoss>,
    pub features: FeatureTable,
}

pub fn train_heads(triplets: &[Triplet], corpus: &Corpus, cfg: &RunConfig) -> Result<Trained> {
    let mut encoders = Encoders::init(&cfg.encoder)?;
    let features = compute_features(corpus, &encoders)?;
    let mut optimizer = AdamState::new(cfg.encoder.embed_dim);
    let curve = train(triplets, &features, &mut encoders.heads, &mut optimizer, &cfg.training)?;
    Ok(Trained {
        encoders,
        optimizer,
        curve,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub consistency: Consistency,
    pub trained: Vec<PrecisionRow>,
    /// Same trunks, identity heads.
    pub baseline: Vec<PrecisionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSection {
    pub trained: ClassificationReport,
    pub baseline: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifest: Manifest,
    pub retrieval: Option<RetrievalReport>,
    pub classification: Option<ClassificationSection>,
    /// Why classification was left out, when it was.
    pub classification_note: Option<String>,
}

/// Manifest plus output hashes of one completed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub manifest: Manifest,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
    /// Not requested, but its artifacts were checked for later stages.
    Verified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub stages: Vec<(Stage, StageStatus)>,
    pub mine_counts: Option<MineCounts>,
}

/// Removes the lock file on drop.
struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(dir: &Path) -> Result<LockGuard> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Validation(format!(
                "{} exists: another run is writing to {}",
                path.display(),
                dir.display()
            ))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn stage_record_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("{stage}.stage.json"))
}

fn read_stage_record(out: &Path, stage: Stage) -> Option<StageRecord> {
    let text = fs::read_to_string(stage_record_path(out, stage)).ok()?;
    serde_json::from_str(&text).ok()
}

fn outputs_match(out: &Path, record: &StageRecord) -> bool {
    record
        .outputs
        .iter()
        .all(|(name, hash)| sha256_file(&out.join(name)).is_ok_and(|h| &h == hash))
}

fn hash_outputs(out: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), sha256_file(&out.join(n))?)))
        .collect()
}

fn artifact_hash(out: &Path, name: &str, stage: Stage) -> Result<String> {
    let p = out.join(name);
    if !p.is_file() {
        return Err(Error::Validation(format!(
            "missing dependency artifact {}: run the {stage} stage first",
            p.display()
        )));
    }
    sha256_file(&p)
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

struct Context<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    ont: Ontology,
    train: Option<Corpus>,
    eval: Option<Corpus>,
}

impl Context<'_> {
    fn train_corpus(&self) -> Result<&Corpus> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::Validation("no training corpus configured".into()))
    }

    fn eval_corpus(&self) -> Result<&Corpus> {
        self.eval.as_ref().map_or_else(|| self.train_corpus(), Ok)
    }

    fn manifest(&self, stage: Stage) -> Result<Manifest> {
        let cfg = self.cfg;
        let mut inputs = BTreeMap::new();
        let config = match stage {
            Stage::Extract => {
                inputs.insert("ontology".to_string(), ontology_hash(&self.ont));
                corpus_inputs(self.train_corpus()?, "train", &mut inputs)?;
                corpus_inputs(self.eval_corpus()?, "eval", &mut inputs)?;
                serde_json::json!({})
            }
            Stage::Mine => {
                inputs.insert(
                    TRAIN_ENTITIES.to_string(),
                    artifact_hash(self.out, TRAIN_ENTITIES, Stage::Extract)?,
                );
                serde_json::json!({"miner": json(&cfg.miner), "mine": json(&cfg.mine)})
            }
            Stage::Train => {
                inputs.insert(TRIPLETS.to_string(), artifact_hash(self.out, TRIPLETS, Stage::Mine)?);
                corpus_inputs(self.train_corpus()?, "train", &mut inputs)?;
                serde_json::json!({"encoder": json(&cfg.encoder), "training": json(&cfg.training)})
            }
            Stage::Eval => {
                inputs.insert(CHECKPOINT.to_string(), artifact_hash(self.out, CHECKPOINT, Stage::Train)?);
                inputs.insert(
                    EVAL_ENTITIES.to_string(),
                    artifact_hash(self.out, EVAL_ENTITIES, Stage::Extract)?,
                );
                inputs.insert("ontology".to_string(), ontology_hash(&self.ont));
                corpus_inputs(self.eval_corpus()?, "eval", &mut inputs)?;
                serde_json::json!({"eval": json(&cfg.eval)})
            }
        };
        let seed = match stage {
            Stage::Extract | Stage::Eval => cfg.seed,
            Stage::Mine => cfg.miner.seed,
            Stage::Train => cfg.training.seed,
        };
        Ok(Manifest::new(stage.name(), seed, config, inputs))
    }

    fn run(&self, stage: Stage, manifest: &Manifest, mine_counts: &mut Option<MineCounts>) -> Result<Vec<&'static str>> {
        let out = self.out;
        match stage {
            Stage::Extract => {
                let train = extract_records(self.train_corpus()?.records(), &self.ont);
                let eval = extract_records(self.eval_corpus()?.records(), &self.ont);
                write(&out.join(TRAIN_ENTITIES), render_entities(&train, Some(manifest))?)?;
                write(&out.join(EVAL_ENTITIES), render_entities(&eval, Some(manifest))?)?;
                Ok(vec![TRAIN_ENTITIES, EVAL_ENTITIES])
            }
            Stage::Mine => {
                let (_, entities) = read_entities(&out.join(TRAIN_ENTITIES))?;
                let outcome = mine_corpus(
                    &mining_samples(&entities),
                    self.cfg.mine.batch_size,
                    self.cfg.mine.target,
                    &self.cfg.miner,
                    self.cfg.mine.max_passes,
                )?;
                let mut m = manifest.clone();
                m.config["counts"] = json(&outcome.counts);
                write(&out.join(TRIPLETS), render_triplets(&outcome.triplets, &m)?)?;
                *mine_counts = Some(outcome.counts);
                Ok(vec![TRIPLETS])
            }
            Stage::Train => {
                let (_, triplets) = read_triplets(&out.join(TRIPLETS))?;
                let trained = train_heads(&triplets, self.train_corpus()?, self.cfg)?;
                checkpoint::save(&out.join(CHECKPOINT), &trained.encoders, &trained.optimizer)?;
                write(&out.join(LOSS_CURVE), to_jsonl(&trained.curve)?)?;
                let mut m = manifest.clone();
                m.config["checkpoint"] = serde_json::Value::String(sha256_file(&out.join(CHECKPOINT))?);
                write(&out.join(TRAIN_MANIFEST), serde_json::to_string_pretty(&m)? + "\n")?;
                Ok(vec![CHECKPOINT, LOSS_CURVE, TRAIN_MANIFEST])
            }
            Stage::Eval => {
                let (enc, _) = checkpoint::load(&out.join(CHECKPOINT))?;
                let (_, entities) = read_entities(&out.join(EVAL_ENTITIES))?;
                let report = evaluate(&enc, self.eval_corpus()?, &entities, &self.ont, self.cfg, manifest.clone())?;
                write(&out.join(EVAL_REPORT), serde_json::to_string_pretty(&report)? + "\n")?;
                Ok(vec![EVAL_REPORT])
            }
        }
    }
}

/// Retrieval tables and zero-shot metrics, trained heads against identity heads.
pub fn evaluate(
    enc: &Encoders,
    corpus: &Corpus,
    entities: &[EntityRecord],
    ont: &Ontology,
    cfg: &RunConfig,
    manifest: Manifest,
) -> Result<EvalReport> {
    let features = compute_features(corpus, enc)?;
    let identity = Heads::identity(enc.image.cfg.embed_dim);
    let depths = &cfg.eval.depths;
    let mode = cfg.eval.consistency;
    let retrieval = RetrievalReport {
        consistency: mode,
        trained: retrieval_table(entities, &features, &enc.heads, depths, mode)?,
        baseline: retrieval_table(entities, &features, &identity, depths, mode)?,
    };
    let (classification, classification_note) = match (
        zero_shot_report(entities, &features, enc, &enc.heads, ont),
        zero_shot_report(entities, &features, enc, &identity, ont),
    ) {
        (Ok(trained), Ok(baseline)) => (Some(ClassificationSection { trained, baseline }), None),
        (Err(Error::Validation(msg)), _) | (_, Err(Error::Validation(msg))) => (None, Some(msg)),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok(EvalReport {
        manifest,
        retrieval: Some(retrieval),
        classification,
        classification_note,
    })
}

/// Runs the requested stages in order. Unrequested stages that earlier
/// requested ones depend on are verified instead: their artifacts must exist
/// and match the current inputs.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage], force: bool) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.out.as_path();
    let _lock = LockGuard::acquire(out)?;
    let train = cfg.train_corpus.as_deref().map(ingest).transpose()?;
    let eval = cfg.eval_corpus.as_deref().map(ingest).transpose()?;
    let ctx = Context {
        cfg,
        out,
        ont: load_ontology(cfg.ontology.as_deref())?,
        train,
        eval,
    };
    let last = stages.iter().max().copied();
    let mut outcome = PipelineOutcome {
        stages: Vec::new(),
        mine_counts: None,
    };
    for stage in Stage::ALL {
        if Some(stage) > last {
            break;
        }
        let manifest = ctx.manifest(stage)?;
        let record = read_stage_record(out, stage);
        let current = record
            .as_ref()
            .is_some_and(|r| r.manifest == manifest && outputs_match(out, r));
        if !stages.contains(&stage) {
            if !current {
                return Err(Error::Validation(format!(
                    "{stage} artifacts in {} are missing or stale (inputs changed): rerun the {stage} stage",
                    out.display()
                )));
            }
            outcome.stages.push((stage, StageStatus::Verified));
            continue;
        }
        if current && !force {
            outcome.stages.push((stage, StageStatus::Skipped));
            continue;
        }
        let names = ctx.run(stage, &manifest, &mut outcome.mine_counts)?;
        let record = StageRecord {
            manifest,
            outputs: hash_outputs(out, &names)?,
        };
        write(&stage_record_path(out, stage), serde_json::to_string_pretty(&record)? + "\n")?;
        outcome.stages.push((stage, StageStatus::Ran));
    }
    Ok(outcome)
}
