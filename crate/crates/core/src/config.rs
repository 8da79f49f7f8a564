//! `key = value` run configuration files.
//!
//! A run file mixes network, training, preprocessing and dataset keys.
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Keys may appear in any order, each at most once, and unknown keys are
//! rejected.
//!
//! Network keys either all appear, or `preset = frenet | frenet_plus | tiny`
//! supplies them and any listed network key overrides the preset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::arch::NetworkConfig;
use crate::error::{config_err, Result};
use crate::raw::{DatasetSpec, PreprocessSpec};
use crate::train::TrainConfig;

/// Parsed key-value document that tracks which keys were consumed.
#[derive(Clone, Debug, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return config_err!("line {}: expected `key = value`, got {raw:?}", n + 1);
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return config_err!("line {}: bad key {k:?}", n + 1);
            }
            if let Some((first, _)) = entries.insert(k.to_string(), (n + 1, v.to_string())) {
                return config_err!("line {}: key {k} already set on line {first}", n + 1);
            }
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    /// Removes and parses `key` if present.
    pub fn take<V: FromStr>(&mut self, key: &str) -> Result<Option<V>> {
        let Some((line, v)) = self.entries.remove(key) else {
            return Ok(None);
        };
        match v.parse() {
            Ok(x) => Ok(Some(x)),
            Err(_) => config_err!("line {line}: cannot parse {key} = {v:?}"),
        }
    }

    pub fn require<V: FromStr>(&mut self, key: &str) -> Result<V> {
        match self.take(key)? {
            Some(v) => Ok(v),
            None => config_err!("missing required key {key}"),
        }
    }

    pub fn take_or<V: FromStr>(&mut self, key: &str, default: V) -> Result<V> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list, e.g. `2, 2, 2`.
    pub fn take_list<V: FromStr>(&mut self, key: &str) -> Result<Option<Vec<V>>> {
        let Some((line, v)) = self.entries.remove(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| s.trim().parse().or_else(|_| config_err!("line {line}: bad list item in {key} = {v:?}")))
            .collect::<Result<Vec<V>>>()
            .map(Some)
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<String> = self
            .entries
            .iter()
            .map(|(k, (line, _))| format!("{k} (line {line})"))
            .collect();
        config_err!("unknown keys: {}", keys.join(", "))
    }
}

/// Appends `key = value\n`.
pub fn write_kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key} = {value}");
}

pub fn join_list<V: std::fmt::Display>(items: &[V]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Everything one CLI run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessSpec,
    pub dataset: DatasetSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text)?;
        let network = NetworkConfig::from_kv(&mut doc)?;
        let train = TrainConfig::from_kv(&mut doc)?;
        let preprocess = PreprocessSpec::from_kv(&mut doc)?;
        let dataset = DatasetSpec::from_kv(&mut doc)?;
        doc.finish()?;
        Ok(Self {
            network,
            train,
            preprocess,
            dataset,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.network.to_text();
        self.train.write_kv(&mut s);
        self.preprocess.write_kv(&mut s);
        self.dataset.write_kv(&mut s);
        s
    }
}
