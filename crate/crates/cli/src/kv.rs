//! Flat `key = value` text with `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{io_err, CliError, Result};

/// Parses `key = value` lines. Blank lines and everything after `#` are
/// ignored; a key may appear only once.
pub fn parse(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |reason: String| CliError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(fail("empty key".into()));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(fail(format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse(&text, path)
}
