//! `key=value` text settings: UTF-8 lines, `#` starts a comment.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        let mut kv = Self::new();
        for (k, v) in pairs {
            kv.set(&k, v);
        }
        kv
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", n + 1), format!("expected key=value, got `{line}`")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(format!("line {}", n + 1), "empty key"));
            }
            if kv.get(k).is_some() {
                return Err(Error::parse(format!("line {}", n + 1), format!("duplicate key `{k}`")));
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn into_pairs(self) -> Vec<(String, String)> {
        self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces, keeping first-insertion order.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_default(&mut self, key: &str, value: impl Display) {
        if self.get(key).is_none() {
            self.set(key, value.to_string());
        }
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Config(format!("bad list item `{s}` for `{key}`"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
