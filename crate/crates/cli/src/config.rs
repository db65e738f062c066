//! Flat `section.key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::{CliError, Result};

/// Every key any command understands. Anything else in a file is rejected.
pub const KNOWN_KEYS: &[&str] = &[
    "world.item_count",
    "world.floors",
    "world.categories",
    "world.regimes",
    "world.dwell_scales",
    "world.t_max",
    "world.b_bound",
    "world.context_width",
    "world.context_signal",
    "world.length_spread",
    "world.seed",
    "world.trajectories",
    "data.file",
    "split.holdout",
    "split.shuffle",
    "split.seed",
    "sampler.strategy",
    "sampler.k_buckets",
    "sampler.weighting",
    "sampler.batch_size",
    "sampler.seed",
    "train.epochs",
    "train.patience",
    "train.batch_size",
    "train.batches_per_epoch",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.lambda_time",
    "train.tau_init",
    "train.tau_min",
    "train.anneal",
    "train.profile",
    "train.seed",
    "train.spectral_iters",
    "train.straight_through",
    "model.embed",
    "model.type_embed",
    "model.floor_embed",
    "model.latent",
    "model.hidden",
    "model.disc_hidden",
    "eval.model_dir",
    "eval.tau",
    "eval.seed",
    "theory.spaces",
    "theory.seed",
    "theory.max_buckets",
    "theory.t_max_ceiling",
    "theory.b_ceiling",
    "theory.max_trajectories",
    "theory.mass_total",
    "theory.time_grid_max",
    "theory.debug_halve_rhs",
];

/// Raw key/value pairs plus a record of every value a command actually used.
#[derive(Debug, Clone, Default)]
pub struct Config {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Config(format!("line {}: unknown key '{key}'", n + 1)));
            }
            if raw.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key '{key}'", n + 1)));
            }
        }
        Ok(Config {
            raw,
            resolved: BTreeMap::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Config::parse(&text)
    }

    /// Replaces (or inserts) a raw value, as `--seed` does.
    pub fn set(&mut self, key: &str, value: String) {
        self.raw.insert(key.to_string(), value);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.raw.contains_key(key)
    }

    fn parse_value<T: FromStr>(key: &str, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| CliError::Config(format!("invalid value '{s}' for key '{key}'")))
    }

    /// Value of a key that must be present.
    pub fn req<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let s = self
            .raw
            .get(key)
            .cloned()
            .ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))?;
        let v = Self::parse_value(key, &s)?;
        self.resolved.insert(key.to_string(), s);
        Ok(v)
    }

    /// Value of an optional key, falling back to `default`.
    pub fn opt<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw.get(key).cloned() {
            Some(s) => {
                let v = Self::parse_value(key, &s)?;
                self.resolved.insert(key.to_string(), s);
                Ok(v)
            }
            None => {
                self.resolved.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    /// Comma-separated list of numbers.
    pub fn list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw.get(key).cloned() {
            Some(s) => {
                let v = s
                    .split(',')
                    .map(|x| Self::parse_value(key, x.trim()))
                    .collect::<Result<Vec<f64>>>()?;
                self.resolved.insert(key.to_string(), s);
                Ok(v)
            }
            None => {
                let s: Vec<String> = default.iter().map(|x| x.to_string()).collect();
                self.resolved.insert(key.to_string(), s.join(", "));
                Ok(default.to_vec())
            }
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}
