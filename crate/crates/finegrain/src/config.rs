//! Flat key=value config files with command-line overrides.
//!
//! One key per line, `key = value`, `#` comments. Unknown keys are
//! rejected by the consumers, which resolve a `FlatConfig` against their
//! known key set and log the fully resolved form.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    values: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', found '{line}'",
                    lineno + 1
                )));
            };
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(FlatConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` override strings (CLI `--set`).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                return Err(Error::Config(format!("override '{o}' is not key=value")));
            };
            self.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Rejects any key outside `known`.
    pub fn ensure_known(&self, known: &[&str]) -> Result<()> {
        for k in self.values.keys() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "unknown config key '{k}' (known: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn required(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'"))),
        }
    }

    /// Canonical `key = value` rendering, the resolved-config log format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let cfg = FlatConfig::parse("# comment\nlr = 0.001\ntask = fine_cls\n\n").unwrap();
        assert_eq!(cfg.get("lr"), Some("0.001"));
        assert_eq!(cfg.get("task"), Some("fine_cls"));
        let again = FlatConfig::parse(&cfg.render()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut cfg = FlatConfig::parse("a = 1").unwrap();
        cfg.apply_overrides(&["b=2".to_string()]).unwrap();
        assert_eq!(cfg.get("b"), Some("2"));
        assert!(cfg.apply_overrides(&["bad".to_string()]).is_err());
        assert!(cfg.ensure_known(&["a"]).is_err());
        assert!(cfg.ensure_known(&["a", "b"]).is_ok());
    }

    #[test]
    fn typed_access() {
        let cfg = FlatConfig::parse("n = 32\nx = 0.5").unwrap();
        assert_eq!(cfg.parse_or("n", 0usize).unwrap(), 32);
        assert_eq!(cfg.parse_or("x", 0.0f64).unwrap(), 0.5);
        assert_eq!(cfg.parse_or("missing", 7usize).unwrap(), 7);
        assert!(cfg.parse_or("x", 0usize).is_err());
    }
}
