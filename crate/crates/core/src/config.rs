//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Consumers pull typed values out with [`KvConfig::take`] and then
//! call [`KvConfig::finish`], which rejects any key nobody asked for.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::config(key, "set more than once"));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Apply a `key=value` override, replacing any existing value.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must be key=value"))?;
        self.entries
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}"))),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list(&mut self, key: &str) -> Option<Vec<String>> {
        self.entries.remove(key).map(|raw| {
            raw.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    /// Fails on the first key that was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_keys().next() {
            Some(key) => Err(Error::config(key, "unknown key")),
            None => Ok(()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Canonical `key = value` rendering used for hashing and persistence.
pub fn render(pairs: &BTreeMap<String, String>) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown() {
        let mut cfg = KvConfig::parse("# c\na = 1\n\nb=x, y\n", "t").unwrap();
        assert_eq!(cfg.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(cfg.take_list("b").unwrap(), vec!["x", "y"]);
        cfg.finish().unwrap();

        let mut cfg = KvConfig::parse("a = 1\nzzz = 2\n", "t").unwrap();
        let _ = cfg.take::<u32>("a");
        match cfg.finish() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "zzz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_line_reports_line_number() {
        match KvConfig::parse("a = 1\nnot a pair\n", "f.cfg") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_names_key() {
        let mut cfg = KvConfig::parse("iterations = three", "t").unwrap();
        let err = cfg.take::<u32>("iterations").unwrap_err();
        assert!(err.to_string().contains("iterations"));
    }

    #[test]
    fn override_replaces() {
        let mut cfg = KvConfig::parse("a = 1", "t").unwrap();
        cfg.set_override("a=5").unwrap();
        assert_eq!(cfg.take::<u32>("a").unwrap(), Some(5));
    }
}
