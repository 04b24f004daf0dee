//! Flat `key = value` configuration files.
//!
//! `#` starts a comment. Experiments read the keys they understand with the
//! typed getters; [`Config::finish`] then rejects anything left over.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, (usize, String)>,
}

impl Config {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{}`", i + 1, raw.trim()))?;
            let key = k.trim();
            if key.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            if entries.insert(key.to_string(), (i + 1, v.trim().to_string())).is_some() {
                bail!("line {}: duplicate key `{key}`", i + 1);
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}` (line {line}): invalid value `{v}`: {e}")),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> anyhow::Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> anyhow::Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|e| anyhow!("config key `{key}` (line {line}): invalid item `{s}`: {e}"))
                })
                .collect::<anyhow::Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Errors on the first key nobody consumed.
    pub fn finish(self) -> anyhow::Result<()> {
        if let Some((k, (line, _))) = self.entries.into_iter().next() {
            if line > 0 {
                bail!("unknown config key `{k}` (line {line})");
            }
            bail!("unknown config key `{k}`");
        }
        Ok(())
    }
}
