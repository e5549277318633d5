//! Flat `key = value` configuration text: one entry per line, `#` starts a
//! comment, blank lines are ignored.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based source line; 0 for entries added programmatically.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<Entry>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", idx + 1)));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: idx + 1,
            });
        }
        Ok(Self { entries })
    }

    /// Appends a `key=value` override; later entries win.
    pub fn push_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.entries.push(Entry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line: 0,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }
}

pub(crate) fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("`{key}`: `{value}` is not a number")))
}

pub(crate) fn parse_u64(key: &str, value: &str) -> Result<u64> {
    let parsed = match value.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => value.parse::<u64>(),
    };
    parsed.map_err(|_| Error::Config(format!("`{key}`: `{value}` is not an unsigned integer")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: `{value}` is not a boolean"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_overrides() {
        let mut kv = KeyValues::parse("# header\n\na = 1 # trailing\n  b=two  \n").unwrap();
        kv.push_override("a=3").unwrap();
        let pairs: Vec<_> = kv
            .entries()
            .iter()
            .map(|e| (e.key.as_str(), e.value.as_str(), e.line))
            .collect();
        assert_eq!(pairs, vec![("a", "1", 3), ("b", "two", 4), ("a", "3", 0)]);
    }

    #[test]
    fn malformed_lines() {
        assert!(KeyValues::parse("no equals sign\n").is_err());
        assert!(KeyValues::parse(" = 4\n").is_err());
        assert!(parse_f64("x", "abc").is_err());
        assert_eq!(parse_u64("seed", "0xff").unwrap(), 255);
        assert!(parse_bool("b", "maybe").is_err());
    }
}
