//! Line-delimited JSON records, artifact manifests and content hashes.
//!
//! Every record line carries `"schema": 1`. Artifact files that depend on
//! other inputs start with a manifest line `{"manifest": {...}}`.
//!
//! | file        | record                                                        |
//! |-------------|---------------------------------------------------------------|
//! | corpus      | `{schema, id, text, image}`; `image` relative to the file     |
//! | entities    | `{schema, id, entries: [{disease, adj: [..], dir: [..]}]}`    |
//! | triplets    | `{anchor_id, positive_id, negative_id, score_ap, score_an}`   |
//! | loss curve  | `{epoch, total, i2t, t2i, i2i, t2t}`                          |

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::miner::Triplet;
use crate::ober::{DiseaseEntry, MetaEntities, Report};

pub const SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub schema: u32,
    pub id: String,
    pub text: String,
    pub image: String,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, image: impl Into<String>) -> CorpusRecord {
        CorpusRecord {
            schema: SCHEMA_VERSION,
            id: id.into(),
            text: text.into(),
            image: image.into(),
        }
    }

    pub fn report(&self) -> Report {
        Report {
            id: self.id.clone(),
            text: self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub schema: u32,
    pub id: String,
    pub entries: Vec<DiseaseEntry>,
}

impl EntityRecord {
    pub fn new(id: impl Into<String>, entities: &MetaEntities) -> EntityRecord {
        EntityRecord {
            schema: SCHEMA_VERSION,
            id: id.into(),
            entries: entities.entries().to_vec(),
        }
    }

    pub fn entities(&self) -> MetaEntities {
        MetaEntities::from(self.entries.clone())
    }
}

/// Provenance of one artifact. Inputs are keyed by logical name, never by
/// absolute path, so identical runs in different directories match byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub artifact: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(artifact: &str, seed: u64, config: serde_json::Value, inputs: BTreeMap<String, String>) -> Manifest {
        Manifest {
            schema: SCHEMA_VERSION,
            artifact: artifact.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash: sha256_hex(config.to_string().as_bytes()),
            config,
            inputs,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    manifest: Manifest,
}

fn check_schema(schema: u32, origin: &str, line: usize) -> Result<()> {
    if schema != SCHEMA_VERSION {
        return Err(Error::parse(
            origin,
            line,
            format!("schema version {schema}, expected {SCHEMA_VERSION}"),
        ));
    }
    Ok(())
}

/// Parses one JSON value per non-blank line; errors carry 1-based line numbers.
pub fn parse_jsonl<T: DeserializeOwned>(src: &str, origin: &str) -> Result<Vec<(usize, T)>> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut src = String::new();
    for line in BufReader::new(file).lines() {
        src.push_str(&line.map_err(|e| Error::io(path, e))?);
        src.push('\n');
    }
    parse_jsonl(&src, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn manifest_header(manifest: Option<&Manifest>) -> Result<String> {
    match manifest {
        Some(m) => Ok(serde_json::to_string(&ManifestLine { manifest: m.clone() })? + "\n"),
        None => Ok(String::new()),
    }
}

/// Splits off a leading manifest line, if any.
fn split_manifest<'a>(src: &'a str, origin: &str) -> Result<(Option<Manifest>, &'a str, usize)> {
    let first = src.lines().next().unwrap_or("");
    if first.trim_start().starts_with("{\"manifest\"") {
        let m: ManifestLine = serde_json::from_str(first).map_err(|e| Error::parse(origin, 1, e.to_string()))?;
        let rest = src.get(first.len()..).unwrap_or("").trim_start_matches(['\r', '\n']);
        Ok((Some(m.manifest), rest, 1))
    } else {
        Ok((None, src, 0))
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_corpus(src: &str, origin: &str) -> Result<Vec<CorpusRecord>> {
    let rows: Vec<(usize, CorpusRecord)> = parse_jsonl(src, origin)?;
    rows.into_iter()
        .map(|(line, r)| check_schema(r.schema, origin, line).map(|_| r))
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    parse_corpus(&read_to_string(path)?, &path.display().to_string())
}

pub fn render_entities(records: &[EntityRecord], manifest: Option<&Manifest>) -> Result<String> {
    Ok(manifest_header(manifest)? + &to_jsonl(records)?)
}

pub fn parse_entities(src: &str, origin: &str) -> Result<(Option<Manifest>, Vec<EntityRecord>)> {
    let (manifest, body, offset) = split_manifest(src, origin)?;
    let rows: Vec<(usize, EntityRecord)> = parse_jsonl(body, origin)?;
    let records = rows
        .into_iter()
        .map(|(line, r)| check_schema(r.schema, origin, line + offset).map(|_| r))
        .collect::<Result<_>>()?;
    Ok((manifest, records))
}

pub fn read_entities(path: &Path) -> Result<(Option<Manifest>, Vec<EntityRecord>)> {
    parse_entities(&read_to_string(path)?, &path.display().to_string())
}

pub fn render_triplets(triplets: &[Triplet], manifest: &Manifest) -> Result<String> {
    Ok(manifest_header(Some(manifest))? + &to_jsonl(triplets)?)
}

pub fn parse_triplets(src: &str, origin: &str) -> Result<(Manifest, Vec<Triplet>)> {
    let (manifest, body, _) = split_manifest(src, origin)?;
    let manifest = manifest.ok_or_else(|| Error::parse(origin, 1, "triplet file must start with a manifest line"))?;
    let rows: Vec<(usize, Triplet)> = parse_jsonl(body, origin)?;
    Ok((manifest, rows.into_iter().map(|(_, t)| t).collect()))
}

pub fn read_triplets(path: &Path) -> Result<(Manifest, Vec<Triplet>)> {
    parse_triplets(&read_to_string(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_schema_and_line_numbers() {
        let src = "{\"schema\":1,\"id\":\"a\",\"text\":\"t\",\"image\":\"a.pgm\"}\n\n{\"schema\":1,\"id\":\"b\",\"image\":\"b.pgm\"}\n";
        let err = parse_corpus(src, "c.jsonl").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, ref msg, .. } if msg.contains("text")));
        let src = "{\"schema\":2,\"id\":\"a\",\"text\":\"t\",\"image\":\"a.pgm\"}\n";
        assert!(matches!(parse_corpus(src, "c").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn entity_round_trip_with_manifest() {
        let me = MetaEntities::from(vec![DiseaseEntry::new("edema", &["mild"], &["left"])]);
        let records = vec![EntityRecord::new("r1", &me), EntityRecord::new("r2", &MetaEntities::default())];
        let m = Manifest::new("entities", 7, serde_json::json!({"k": 1}), BTreeMap::new());
        let text = render_entities(&records, Some(&m)).unwrap();
        assert!(text.starts_with("{\"manifest\""));
        assert!(text.contains("{\"schema\":1,\"id\":\"r1\",\"entries\":[{\"disease\":\"edema\",\"adj\":[\"mild\"],\"dir\":[\"left\"]}]}"));
        let (m2, back) = parse_entities(&text, "e").unwrap();
        assert_eq!(m2, Some(m));
        assert_eq!(back, records);
        assert_eq!(back[0].entities(), me);
    }

    #[test]
    fn triplets_need_manifest() {
        let t = Triplet {
            anchor_id: "a".into(),
            positive_id: "b".into(),
            negative_id: "c".into(),
            score_ap: 0.9,
            score_an: 0.3,
        };
        let m = Manifest::new("triplets", 1, serde_json::json!({}), BTreeMap::new());
        let text = render_triplets(&[t.clone()], &m).unwrap();
        let (m2, back) = parse_triplets(&text, "t").unwrap();
        assert_eq!((m2, back), (m, vec![t]));
        assert!(parse_triplets("", "t").is_err());
    }

    #[test]
    fn hashes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
