//! Flat `key=value` text, one field per line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("<key=value>", i + 1, format!("expected key=value, got {line:?}")))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvMap { entries })
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Self {
        KvMap {
            entries: pairs.iter().cloned().collect(),
        }
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("missing key {key:?}")))
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|e| Error::invalid(format!("bad value {raw:?} for {key}: {e}")))
    }
}

pub fn render(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Shortest decimal that round-trips the `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
