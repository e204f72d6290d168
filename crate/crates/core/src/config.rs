//! `key=value` line files shared by the threshold table and the engine config.
//!
//! Blank lines and lines starting with `#` are ignored. Whitespace around keys
//! and values is trimmed.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    /// 1-based line number in the source text.
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_key_values(text: &str) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Config {
            line,
            reason: format!("expected key=value, got {trimmed:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config {
                line,
                reason: "empty key".into(),
            });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(Error::Config {
                line,
                reason: format!("duplicate key {key:?}"),
            });
        }
        entries.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

pub fn read_key_values(path: &Path) -> Result<Vec<Entry>> {
    parse_key_values(&fs::read_to_string(path)?)
}
