//! Ontology-based entity recognition.
//!
//! Pipeline: lemmatize → split into sentences → drop sentences containing a
//! deleter word → per sentence, find diseases and, when at least one is
//! found, the adjectives and directions of that sentence. Entries for the
//! same disease are merged by set union.
//!
//! Negation is not modelled: "no pleural effusion" yields a pleural effusion
//! entry. Deleter words are the only suppression mechanism.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::lemma::{lemmatize_tokens, Token};
use crate::ontology::{Lexicon, Ontology};

pub use crate::lemma::lemmatize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseEntry {
    pub disease: String,
    pub adj: BTreeSet<String>,
    pub dir: BTreeSet<String>,
}

impl DiseaseEntry {
    pub fn new<S: AsRef<str>>(disease: &str, adj: &[S], dir: &[S]) -> DiseaseEntry {
        DiseaseEntry {
            disease: disease.to_string(),
            adj: adj.iter().map(|s| s.as_ref().to_string()).collect(),
            dir: dir.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }
}

/// Per-report meta-entities: unique diseases, sorted by label, each with
/// its adjective and direction sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<DiseaseEntry>", into = "Vec<DiseaseEntry>")]
pub struct MetaEntities {
    entries: Vec<DiseaseEntry>,
}

impl From<Vec<DiseaseEntry>> for MetaEntities {
    fn from(entries: Vec<DiseaseEntry>) -> Self {
        let mut merged: BTreeMap<String, DiseaseEntry> = BTreeMap::new();
        for e in entries {
            match merged.get_mut(&e.disease) {
                Some(m) => {
                    m.adj.extend(e.adj);
                    m.dir.extend(e.dir);
                }
                None => {
                    merged.insert(e.disease.clone(), e);
                }
            }
        }
        MetaEntities {
            entries: merged.into_values().collect(),
        }
    }
}

impl From<MetaEntities> for Vec<DiseaseEntry> {
    fn from(m: MetaEntities) -> Self {
        m.entries
    }
}

impl MetaEntities {
    pub fn entries(&self) -> &[DiseaseEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, disease: &str) -> Option<&DiseaseEntry> {
        self.entries
            .binary_search_by(|e| e.disease.as_str().cmp(disease))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn diseases(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.disease.as_str()).collect()
    }

    /// Union of adjective labels over all entries.
    pub fn adjectives(&self) -> BTreeSet<&str> {
        self.entries.iter().flat_map(|e| e.adj.iter().map(String::as_str)).collect()
    }

    /// Union of direction labels over all entries.
    pub fn directions(&self) -> BTreeSet<&str> {
        self.entries.iter().flat_map(|e| e.dir.iter().map(String::as_str)).collect()
    }
}

/// Split a lemmatized token stream on terminal punctuation and splitter
/// words. Splitters are consumed; empty segments are dropped.
pub fn split_sentences(tokens: &[Token], ont: &Ontology) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for tok in tokens {
        match tok {
            Token::Word(w) if !ont.splitters().contains(w) => current.push(w.clone()),
            _ => {
                if !current.is_empty() {
                    out.push(Sentence {
                        tokens: std::mem::take(&mut current),
                    });
                }
            }
        }
    }
    if !current.is_empty() {
        out.push(Sentence { tokens: current });
    }
    out
}

/// Drop every sentence containing a deleter word, keeping order.
pub fn filter_sentences(sentences: Vec<Sentence>, ont: &Ontology) -> Vec<Sentence> {
    sentences
        .into_iter()
        .filter(|s| !s.tokens.iter().any(|t| ont.deleters().contains(t)))
        .collect()
}

/// Greedy leftmost-longest scan; matched tokens are claimed.
fn scan(tokens: &[String], claimed: &mut [bool], lex: &Lexicon) -> Vec<usize> {
    let mut found = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match lex.longest_at(tokens, claimed, i) {
            Some((idx, len)) => {
                claimed[i..i + len].iter_mut().for_each(|c| *c = true);
                found.push(idx);
                i += len;
            }
            None => i += 1,
        }
    }
    found
}

/// Entities of one sentence: one entry per disease found, each carrying every
/// adjective and direction of the sentence. Tokens used by a disease phrase
/// are not reused as descriptors.
pub fn extract_sentence(sentence: &Sentence, ont: &Ontology) -> Vec<DiseaseEntry> {
    let tokens = &sentence.tokens;
    let mut claimed = vec![false; tokens.len()];
    let diseases = scan(tokens, &mut claimed, ont.disease_lexicon());
    if diseases.is_empty() {
        return Vec::new();
    }
    let dir: BTreeSet<String> = scan(tokens, &mut claimed, ont.direction_lexicon())
        .into_iter()
        .map(|i| ont.directions()[i].canonical().to_string())
        .collect();
    let adj: BTreeSet<String> = scan(tokens, &mut claimed, ont.adjective_lexicon())
        .into_iter()
        .map(|i| ont.adjectives()[i].canonical().to_string())
        .collect();
    diseases
        .into_iter()
        .map(|i| DiseaseEntry {
            disease: ont.diseases()[i].canonical().to_string(),
            adj: adj.clone(),
            dir: dir.clone(),
        })
        .collect()
}

pub fn extract_text(text: &str, ont: &Ontology) -> MetaEntities {
    let tokens = lemmatize_tokens(text);
    let sentences = filter_sentences(split_sentences(&tokens, ont), ont);
    sentences
        .iter()
        .flat_map(|s| extract_sentence(s, ont))
        .collect::<Vec<_>>()
        .into()
}

pub fn extract(report: &Report, ont: &Ontology) -> MetaEntities {
    extract_text(&report.text, ont)
}
