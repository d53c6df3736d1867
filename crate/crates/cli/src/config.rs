//! Flat `key = value` config files. Keys use the long flag names, with `-`
//! and `_` interchangeable; command-line flags take precedence.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::DataError;

const KNOWN_KEYS: &[&str] = &[
    "assign_threshold",
    "classes",
    "detections",
    "edge_threshold",
    "epoch_gain",
    "epochs",
    "fixtures",
    "fp_rate",
    "gt_dir",
    "images",
    "iou",
    "jitter",
    "jobs",
    "k",
    "labels",
    "max_classes",
    "max_epochs",
    "max_instances",
    "miss_rate",
    "out",
    "out_dir",
    "pr_curves",
    "score_noise",
    "seed",
    "timing",
    "update",
];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DataError::new(format!("config line {}: expected key = value", i + 1)))?;
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(DataError::new(format!("config line {}: unknown key {key:?}", i + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(DataError::new(format!("config line {}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::new(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, DataError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|e| DataError::new(format!("config key {key}: {e}")))
            })
            .transpose()
    }

    /// The flag value if given, else the config value.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, DataError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, DataError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T, DataError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| DataError::new(format!("--{} is required", key.replace('_', "-"))))
    }
}
