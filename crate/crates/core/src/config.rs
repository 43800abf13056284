//! Training configuration and its flat `key = value` text format.
//!
//! ```text
//! # comments and blank lines are ignored
//! tau = 0.1
//! omega = 2.0
//! k = ground_truth      # or an integer, or "estimate"
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::losses::LossConfig;
use crate::{RapError, Result};

/// How many clusters / prototypes training and inference use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterCount {
    /// The task's `total_classes`.
    GroundTruth,
    Fixed(usize),
    /// Estimated from warmup embeddings with `k_init = 2 × total_classes`.
    Estimate,
}

impl fmt::Display for ClusterCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterCount::GroundTruth => f.write_str("ground_truth"),
            ClusterCount::Fixed(k) => write!(f, "{k}"),
            ClusterCount::Estimate => f.write_str("estimate"),
        }
    }
}

impl FromStr for ClusterCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ground_truth" | "gt" => Ok(ClusterCount::GroundTruth),
            "estimate" => Ok(ClusterCount::Estimate),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .map(ClusterCount::Fixed)
                .ok_or_else(|| {
                    format!("expected a positive integer, `ground_truth` or `estimate`, got {other:?}")
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Joint-training epochs after warmup; 0 trains the warmup only.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub k: ClusterCount,
    /// Embedding width `h_out`.
    pub embed_dim: usize,
    /// Global gradient L2-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Fraction of the labeled split held out for early stopping.
    pub val_fraction: f64,
    /// Size threshold ratio used when `k = estimate`.
    pub drop_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            epochs: 50,
            batch_size: 64,
            learning_rate: 5e-2,
            warmup_epochs: 5,
            early_stop_patience: 20,
            seed: 0,
            k: ClusterCount::GroundTruth,
            embed_dim: 32,
            grad_clip: 5.0,
            val_fraction: 0.1,
            drop_ratio: 0.5,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "tau",
    "alpha",
    "omega",
    "lambda",
    "eps_dist",
    "use_apdl",
    "epochs",
    "batch_size",
    "learning_rate",
    "warmup_epochs",
    "early_stop_patience",
    "seed",
    "k",
    "embed_dim",
    "grad_clip",
    "val_fraction",
    "drop_ratio",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| RapError::InvalidConfigValue {
        key: key.to_owned(),
        message: format!("{value:?}: {e}"),
    })
}

impl TrainConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "tau" => self.loss.tau = parse(key, value)?,
            "alpha" => self.loss.alpha = parse(key, value)?,
            "omega" => self.loss.omega = parse(key, value)?,
            "lambda" => self.loss.lambda = parse(key, value)?,
            "eps_dist" => self.loss.eps_dist = parse(key, value)?,
            "use_apdl" => self.loss.use_apdl = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "drop_ratio" => self.drop_ratio = parse(key, value)?,
            other => return Err(RapError::UnknownConfigKey(other.to_owned())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "tau" => self.loss.tau.to_string(),
            "alpha" => self.loss.alpha.to_string(),
            "omega" => self.loss.omega.to_string(),
            "lambda" => self.loss.lambda.to_string(),
            "eps_dist" => self.loss.eps_dist.to_string(),
            "use_apdl" => self.loss.use_apdl.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "early_stop_patience" => self.early_stop_patience.to_string(),
            "seed" => self.seed.to_string(),
            "k" => self.k.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "drop_ratio" => self.drop_ratio.to_string(),
            _ => return None,
        })
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| RapError::MalformedLine {
                line: idx + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RapError::io(path, e))?;
        Self::from_text(&text)
    }

    /// Renders every key in the file format, one per line.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |key: &str, message: &str| {
            Err(RapError::InvalidConfigValue {
                key: key.to_owned(),
                message: message.to_owned(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim", "must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be non-negative");
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad("grad_clip", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", "must lie in [0, 1)");
        }
        if !(self.drop_ratio > 0.0 && self.drop_ratio < 1.0) {
            return bad("drop_ratio", "must lie in (0, 1)");
        }
        Ok(())
    }
}
