//! Sectioned word-list text format shared by ontology and run-config files.
//!
//! ```text
//! # comment
//! [diseases]
//! pleural effusion = [pleural effusion, effusion]
//! [splitters]
//! however
//! [miner]
//! tau_min = 0.25
//! ```
//!
//! Grammar, one construct per line:
//! - blank lines and lines whose first non-space character is `#` are ignored;
//! - `[name]` opens a section (names are unique within a file);
//! - `key = [a, b, c]` is a list entry, `key = value` a scalar entry;
//! - anything else is a bare entry (a key without value).
//!
//! Keys and items are trimmed; keys may contain spaces. Items cannot contain
//! `,`, `[`, `]` or `=`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Scalar(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: Option<Value>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn parse(src: &str, origin: &str) -> Result<Document> {
        let mut doc = Document::default();
        for (idx, raw) in src.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(Error::parse(origin, lineno, "unterminated section header"));
                };
                let name = name.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(Error::parse(origin, lineno, format!("bad section name `{name}`")));
                }
                if doc.section(name).is_some() {
                    return Err(Error::parse(origin, lineno, format!("duplicate section `{name}`")));
                }
                doc.sections.push(Section {
                    name: name.to_string(),
                    line: lineno,
                    entries: Vec::new(),
                });
                continue;
            }
            let Some(section) = doc.sections.last_mut() else {
                return Err(Error::parse(origin, lineno, "entry outside of any section"));
            };
            section.entries.push(parse_entry(line, lineno, origin)?);
        }
        Ok(doc)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, section) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", section.name);
            for entry in &section.entries {
                match &entry.value {
                    None => {
                        let _ = writeln!(out, "{}", entry.key);
                    }
                    Some(Value::Scalar(v)) => {
                        let _ = writeln!(out, "{} = {}", entry.key, v);
                    }
                    Some(Value::List(items)) => {
                        let _ = writeln!(out, "{} = [{}]", entry.key, items.join(", "));
                    }
                }
            }
        }
        out
    }
}

fn check_item(item: &str, lineno: usize, origin: &str) -> Result<()> {
    if let Some(c) = item.chars().find(|c| matches!(c, ',' | '[' | ']' | '=')) {
        return Err(Error::parse(origin, lineno, format!("unexpected `{c}` in `{item}`")));
    }
    Ok(())
}

fn parse_entry(line: &str, lineno: usize, origin: &str) -> Result<Entry> {
    let Some((key, value)) = line.split_once('=') else {
        check_item(line, lineno, origin)?;
        return Ok(Entry {
            key: line.to_string(),
            value: None,
            line: lineno,
        });
    };
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::parse(origin, lineno, "empty key"));
    }
    check_item(key, lineno, origin)?;
    let value = value.trim();
    let value = if let Some(inner) = value.strip_prefix('[') {
        let Some(inner) = inner.strip_suffix(']') else {
            return Err(Error::parse(origin, lineno, "unterminated list"));
        };
        let mut items = Vec::new();
        if !inner.trim().is_empty() {
            for item in inner.split(',') {
                let item = item.trim();
                if item.is_empty() {
                    return Err(Error::parse(origin, lineno, "empty list item"));
                }
                check_item(item, lineno, origin)?;
                items.push(item.to_string());
            }
        }
        Value::List(items)
    } else {
        if value.is_empty() {
            return Err(Error::parse(origin, lineno, format!("missing value for `{key}`")));
        }
        check_item(value, lineno, origin)?;
        Value::Scalar(value.to_string())
    };
    Ok(Entry {
        key: key.to_string(),
        value: Some(value),
        line: lineno,
    })
}
