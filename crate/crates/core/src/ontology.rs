//! Word ontology driving entity recognition.
//!
//! Five categories: disease, adjective and direction synsets, plus
//! sentence-splitting and sentence-deleting tokens. Everything is stored in
//! lemmatized lowercase form so matching works on lemmatized report text.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lemma::lemmatize;
use crate::textfmt::{Document, Entry, Section, Value};

const DEFAULT_ONTOLOGY: &str = include_str!("../data/default_ontology.txt");

pub const SECTION_NAMES: [&str; 5] = ["diseases", "adjectives", "directions", "splitters", "deleters"];

/// A canonical label with its surface variants, all lemmatized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synset {
    canonical: String,
    variants: BTreeSet<String>,
}

fn lemmatize_phrase(raw: &str, owner: &str) -> Result<String> {
    if raw.chars().any(|c| matches!(c, '.' | '!' | '?' | ';' | ':')) {
        return Err(Error::Validation(format!(
            "variant `{raw}` of `{owner}` contains sentence-terminal punctuation"
        )));
    }
    let phrase = lemmatize(raw).join(" ");
    if phrase.is_empty() {
        return Err(Error::Validation(format!("empty variant in `{owner}`")));
    }
    Ok(phrase)
}

impl Synset {
    /// Build a synset; the canonical label is added to the variants.
    pub fn new<S: AsRef<str>>(canonical: &str, variants: &[S]) -> Result<Synset> {
        let canonical = lemmatize_phrase(canonical, canonical)?;
        let mut set = BTreeSet::new();
        set.insert(canonical.clone());
        for v in variants {
            set.insert(lemmatize_phrase(v.as_ref(), &canonical)?);
        }
        Ok(Synset {
            canonical,
            variants: set,
        })
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn variants(&self) -> &BTreeSet<String> {
        &self.variants
    }
}

/// Phrase lookup table for longest-match scanning.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    phrases: HashMap<Vec<String>, usize>,
    max_len: usize,
}

impl Lexicon {
    fn build(synsets: &[Synset], category: &str) -> Result<Lexicon> {
        let mut phrases = HashMap::new();
        let mut max_len = 0;
        for (idx, syn) in synsets.iter().enumerate() {
            for v in &syn.variants {
                let key: Vec<String> = v.split(' ').map(str::to_string).collect();
                max_len = max_len.max(key.len());
                if let Some(prev) = phrases.insert(key, idx) {
                    if prev != idx {
                        return Err(Error::Validation(format!(
                            "{category} variant `{v}` is shared by `{}` and `{}`",
                            synsets[prev].canonical, syn.canonical
                        )));
                    }
                }
            }
        }
        Ok(Lexicon { phrases, max_len })
    }

    /// Longest phrase starting at `start` whose tokens are all unclaimed.
    /// Returns `(synset index, phrase length)`.
    pub fn longest_at(&self, tokens: &[String], claimed: &[bool], start: usize) -> Option<(usize, usize)> {
        let avail = tokens.len() - start;
        for len in (1..=self.max_len.min(avail)).rev() {
            if claimed[start..start + len].iter().any(|&c| c) {
                continue;
            }
            if let Some(&idx) = self.phrases.get(&tokens[start..start + len]) {
                return Some((idx, len));
            }
        }
        None
    }
}

#[derive(Debug, Clone)]
pub struct Ontology {
    diseases: Vec<Synset>,
    adjectives: Vec<Synset>,
    directions: Vec<Synset>,
    splitters: BTreeSet<String>,
    deleters: BTreeSet<String>,
    disease_lex: Lexicon,
    adjective_lex: Lexicon,
    direction_lex: Lexicon,
}

impl PartialEq for Ontology {
    fn eq(&self, other: &Self) -> bool {
        self.diseases == other.diseases
            && self.adjectives == other.adjectives
            && self.directions == other.directions
            && self.splitters == other.splitters
            && self.deleters == other.deleters
    }
}

fn sorted_unique(mut synsets: Vec<Synset>, category: &str) -> Result<Vec<Synset>> {
    synsets.sort_by(|a, b| a.canonical.cmp(&b.canonical));
    for pair in synsets.windows(2) {
        if pair[0].canonical == pair[1].canonical {
            return Err(Error::Validation(format!("duplicate {category} `{}`", pair[0].canonical)));
        }
    }
    Ok(synsets)
}

fn token_set<S: AsRef<str>>(raw: &[S], category: &str) -> Result<BTreeSet<String>> {
    let mut set = BTreeSet::new();
    for r in raw {
        let lemmas = lemmatize(r.as_ref());
        if lemmas.len() != 1 {
            return Err(Error::Validation(format!(
                "{category} entry `{}` must be a single word",
                r.as_ref()
            )));
        }
        if !set.insert(lemmas[0].clone()) {
            return Err(Error::Validation(format!("duplicate {category} `{}`", lemmas[0])));
        }
    }
    Ok(set)
}

impl Ontology {
    pub fn new<S: AsRef<str>>(
        diseases: Vec<Synset>,
        adjectives: Vec<Synset>,
        directions: Vec<Synset>,
        splitters: &[S],
        deleters: &[S],
    ) -> Result<Ontology> {
        let diseases = sorted_unique(diseases, "disease")?;
        let adjectives = sorted_unique(adjectives, "adjective")?;
        let directions = sorted_unique(directions, "direction")?;
        let splitters = token_set(splitters, "splitter")?;
        let deleters = token_set(deleters, "deleter")?;
        if let Some(clash) = splitters.intersection(&deleters).next() {
            return Err(Error::Validation(format!("`{clash}` is both a splitter and a deleter")));
        }
        Ok(Ontology {
            disease_lex: Lexicon::build(&diseases, "disease")?,
            adjective_lex: Lexicon::build(&adjectives, "adjective")?,
            direction_lex: Lexicon::build(&directions, "direction")?,
            diseases,
            adjectives,
            directions,
            splitters,
            deleters,
        })
    }

    /// The embedded default ontology.
    pub fn default_ontology() -> Ontology {
        Ontology::parse(DEFAULT_ONTOLOGY, "<default ontology>").expect("embedded ontology is valid")
    }

    pub fn load(path: &Path) -> Result<Ontology> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ontology::parse(&src, &path.display().to_string())
    }

    pub fn parse(src: &str, origin: &str) -> Result<Ontology> {
        let doc = Document::parse(src, origin)?;
        for s in &doc.sections {
            if !SECTION_NAMES.contains(&s.name.as_str()) {
                return Err(Error::parse(origin, s.line, format!("unknown section `{}`", s.name)));
            }
        }
        let synsets = |name: &str| -> Result<Vec<Synset>> {
            let Some(section) = doc.section(name) else {
                return Ok(Vec::new());
            };
            section
                .entries
                .iter()
                .map(|e| {
                    let variants = match &e.value {
                        None => Vec::new(),
                        Some(Value::Scalar(v)) => vec![v.clone()],
                        Some(Value::List(vs)) => vs.clone(),
                    };
                    Synset::new(&e.key, &variants)
                })
                .collect()
        };
        let tokens = |name: &str| -> Result<Vec<String>> {
            let Some(section) = doc.section(name) else {
                return Ok(Vec::new());
            };
            section
                .entries
                .iter()
                .map(|e| match e.value {
                    None => Ok(e.key.clone()),
                    Some(_) => Err(Error::parse(origin, e.line, format!("`{name}` entries are bare words"))),
                })
                .collect()
        };
        Ontology::new(
            synsets("diseases")?,
            synsets("adjectives")?,
            synsets("directions")?,
            &tokens("splitters")?,
            &tokens("deleters")?,
        )
    }

    /// Canonical text form: fixed section order, entries sorted by canonical.
    pub fn serialize(&self) -> String {
        let synset_section = |name: &str, synsets: &[Synset]| Section {
            name: name.to_string(),
            line: 0,
            entries: synsets
                .iter()
                .map(|s| Entry {
                    key: s.canonical.clone(),
                    value: Some(Value::List(s.variants.iter().cloned().collect())),
                    line: 0,
                })
                .collect(),
        };
        let token_section = |name: &str, tokens: &BTreeSet<String>| Section {
            name: name.to_string(),
            line: 0,
            entries: tokens
                .iter()
                .map(|t| Entry {
                    key: t.clone(),
                    value: None,
                    line: 0,
                })
                .collect(),
        };
        Document {
            sections: vec![
                synset_section("diseases", &self.diseases),
                synset_section("adjectives", &self.adjectives),
                synset_section("directions", &self.directions),
                token_section("splitters", &self.splitters),
                token_section("deleters", &self.deleters),
            ],
        }
        .render()
    }

    pub fn diseases(&self) -> &[Synset] {
        &self.diseases
    }

    pub fn adjectives(&self) -> &[Synset] {
        &self.adjectives
    }

    pub fn directions(&self) -> &[Synset] {
        &self.directions
    }

    pub fn splitters(&self) -> &BTreeSet<String> {
        &self.splitters
    }

    pub fn deleters(&self) -> &BTreeSet<String> {
        &self.deleters
    }

    pub fn disease_lexicon(&self) -> &Lexicon {
        &self.disease_lex
    }

    pub fn adjective_lexicon(&self) -> &Lexicon {
        &self.adjective_lex
    }

    pub fn direction_lexicon(&self) -> &Lexicon {
        &self.direction_lex
    }

    pub fn has_disease(&self, canonical: &str) -> bool {
        self.diseases.iter().any(|s| s.canonical == canonical)
    }

    pub fn disease_labels(&self) -> Vec<&str> {
        self.diseases.iter().map(|s| s.canonical.as_str()).collect()
    }

    /// Per-category entry counts, keyed by section name.
    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        BTreeMap::from([
            ("diseases", self.diseases.len()),
            ("adjectives", self.adjectives.len()),
            ("directions", self.directions.len()),
            ("splitters", self.splitters.len()),
            ("deleters", self.deleters.len()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lemma::lemmatize_word;
    use proptest::prelude::*;

    #[test]
    fn minimal_file() {
        let ont = Ontology::parse("[diseases]\nedema = [edema]\n", "t").unwrap();
        assert_eq!(ont.diseases().len(), 1);
        assert_eq!(ont.diseases()[0].canonical(), "edema");
        assert!(ont.adjectives().is_empty() && ont.directions().is_empty());
        assert!(ont.splitters().is_empty() && ont.deleters().is_empty());
    }

    #[test]
    fn duplicate_canonical_is_named() {
        let err = Ontology::parse("[diseases]\nedema = [edema]\nedema = [oedema]\n", "t").unwrap_err();
        assert!(err.to_string().contains("edema"), "{err}");
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn other_validation_errors() {
        let err = Ontology::parse("[splitters]\nbut\n[deleters]\nbut\n", "t").unwrap_err();
        assert!(err.to_string().contains("`but`"), "{err}");
        let err = Ontology::parse("[diseases]\nedema = [edema, -]\n", "t").unwrap_err();
        assert!(err.to_string().contains("empty variant"), "{err}");
        let err = Synset::new("edema", &["edema."]).unwrap_err();
        assert!(err.to_string().contains("punctuation"), "{err}");
        let err = Ontology::parse("[diseases]\na = [mass]\nb = [masses]\n", "t").unwrap_err();
        assert!(err.to_string().contains("shared"), "{err}");
        let err = Ontology::parse("[colors]\nred\n", "t").unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");
        let err = Ontology::parse("[deleters]\nfollow up\n", "t").unwrap_err();
        assert!(err.to_string().contains("single word"), "{err}");
    }

    #[test]
    fn default_counts() {
        let ont = Ontology::default_ontology();
        let counts = ont.counts();
        assert_eq!(counts["diseases"], 12);
        assert_eq!(counts["adjectives"], 40);
        assert_eq!(counts["directions"], 4);
        assert_eq!(counts["splitters"], 6);
        assert_eq!(counts["deleters"], 16);
        assert!(ont.has_disease("pleural effusion"));
        let dirs: Vec<_> = ont.directions().iter().map(|s| s.canonical()).collect();
        assert_eq!(dirs, ["left", "lower", "right", "upper"]);
        for adj in ["mild", "moderate", "severe", "small", "large", "acute", "chronic", "trace", "diffuse", "focal"] {
            assert!(ont.adjectives().iter().any(|s| s.canonical() == adj), "{adj}");
        }
    }

    #[test]
    fn variants_are_lemmas_and_include_canonical() {
        let ont = Ontology::default_ontology();
        for syn in ont.diseases().iter().chain(ont.adjectives()).chain(ont.directions()) {
            assert!(syn.variants().contains(syn.canonical()));
            for v in syn.variants() {
                assert_eq!(&lemmatize(v).join(" "), v);
            }
        }
        for t in ont.splitters().iter().chain(ont.deleters()) {
            assert_eq!(&lemmatize_word(t), t);
        }
    }

    #[test]
    fn default_round_trips() {
        let ont = Ontology::default_ontology();
        let text = ont.serialize();
        let back = Ontology::parse(&text, "rt").unwrap();
        assert_eq!(back, ont);
        assert_eq!(back.serialize(), text);
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{2,8}"
    }

    proptest! {
        #[test]
        fn random_ontologies_round_trip(
            diseases in proptest::collection::btree_map(word(), proptest::collection::vec(word(), 0..3), 0..5),
            splitters in proptest::collection::btree_set(word(), 0..4),
        ) {
            let synsets: Vec<Synset> = diseases.iter().map(|(c, v)| Synset::new(c, v)).collect::<Result<_>>().unwrap();
            let splitters: Vec<String> = splitters.into_iter().collect();
            let none: Vec<String> = Vec::new();
            // random words can collide after lemmatization; only valid ontologies are checked
            if let Ok(ont) = Ontology::new(synsets, vec![], vec![], &splitters, &none) {
                let back = Ontology::parse(&ont.serialize(), "rt").unwrap();
                prop_assert_eq!(back, ont);
            }
        }
    }
}
