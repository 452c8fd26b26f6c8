//! Report tokenizer and rule-based lemmatizer.
//!
//! Tokens are lowercase runs of alphanumerics. `.`, `!`, `?`, `;` and `:`
//! end a sentence (a `.` between two digits stays inside the number); every
//! other character separates words.
//!
//! Lemmas come from a small exception table followed by suffix rules:
//! `-ies`/`-ied` → `-y`, `-sses`/`-ches`/`-shes`/`-xes`/`-zes` lose `-es`,
//! a final `-s` is dropped unless the word ends in `ss`, `us` or `is`, and
//! `-ed`/`-ing` are stripped when at least three characters remain (a doubled
//! final consonant is then undoubled). Rules are applied until the word stops
//! changing, so every lemma is a fixed point of the lemmatizer.

use std::collections::HashMap;
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Word(String),
    /// Sentence-terminal punctuation.
    Stop,
}

impl Token {
    pub fn as_word(&self) -> Option<&str> {
        match self {
            Token::Word(w) => Some(w),
            Token::Stop => None,
        }
    }
}

const EXCEPTIONS: &[(&str, &str)] = &[
    ("opacities", "opacity"),
    ("atelectases", "atelectasis"),
    ("pneumothoraces", "pneumothorax"),
    ("diagnoses", "diagnosis"),
    ("bases", "base"),
    ("apices", "apex"),
    ("compared", "compare"),
    ("comparing", "compare"),
    ("communicated", "communicate"),
    ("resolved", "resolve"),
    ("resolving", "resolve"),
    // participial adjectives kept as-is
    ("sided", "sided"),
    ("enlarged", "enlarged"),
    ("increased", "increased"),
    ("decreased", "decreased"),
    ("improved", "improved"),
    ("worsened", "worsened"),
    ("worsening", "worsening"),
    ("loculated", "loculated"),
    ("calcified", "calcified"),
    ("displaced", "displaced"),
    ("nondisplaced", "nondisplaced"),
    ("layering", "layering"),
    ("scattered", "scattered"),
    ("unchanged", "unchanged"),
    ("widened", "widened"),
    ("widening", "widening"),
    ("elevated", "elevated"),
    ("blunted", "blunted"),
    ("blunting", "blunting"),
];

fn exceptions() -> &'static HashMap<&'static str, &'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| EXCEPTIONS.iter().copied().collect())
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | ';' | ':')
}

/// Split raw text into lowercase word tokens and sentence stops, unlemmatized.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        let decimal_point = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if decimal_point {
            word.push('.');
            continue;
        }
        if !word.is_empty() {
            out.push(Token::Word(std::mem::take(&mut word)));
        }
        if is_terminal(c) {
            out.push(Token::Stop);
        }
    }
    if !word.is_empty() {
        out.push(Token::Word(word));
    }
    out
}

fn undouble(stem: &str) -> &str {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !b"aeioulsz".contains(&b[n - 1]) {
        &stem[..n - 1]
    } else {
        stem
    }
}

fn step(word: &str) -> String {
    if let Some(&lemma) = exceptions().get(word) {
        return lemma.to_string();
    }
    if word.chars().count() <= 3 || !word.chars().all(|c| c.is_ascii_lowercase()) {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = word.strip_suffix("ied") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    for suffix in ["sses", "ches", "shes", "xes", "zes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with('s') && !(word.ends_with("ss") || word.ends_with("us") || word.ends_with("is")) {
        return word[..word.len() - 1].to_string();
    }
    for suffix in ["ed", "ing"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.len() >= 3 {
                return undouble(stem).to_string();
            }
        }
    }
    word.to_string()
}

/// Lemmatize a single lowercase word.
pub fn lemmatize_word(word: &str) -> String {
    let mut current = word.to_lowercase();
    // every rule shortens the word or maps into the fixed-point exception set
    for _ in 0..word.len() + 2 {
        let next = step(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Tokenize and lemmatize, keeping sentence stops.
pub fn lemmatize_tokens(text: &str) -> Vec<Token> {
    tokenize(text)
        .into_iter()
        .map(|t| match t {
            Token::Word(w) => Token::Word(lemmatize_word(&w)),
            Token::Stop => Token::Stop,
        })
        .collect()
}

/// Lemmatized words of `text`, punctuation dropped.
pub fn lemmatize(text: &str) -> Vec<String> {
    lemmatize_tokens(text)
        .into_iter()
        .filter_map(|t| match t {
            Token::Word(w) => Some(w),
            Token::Stop => None,
        })
        .collect()
}
