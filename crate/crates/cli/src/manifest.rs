//! Run manifest written next to every training run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rap_core::config::{TrainConfig, CONFIG_KEYS};

use crate::report::EvalReport;

pub const FORMAT: &str = "rap-run-manifest";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Every config key with its effective value.
    pub config: BTreeMap<String, String>,
    pub dataset: DatasetFingerprint,
    pub artifacts: Artifacts,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFingerprint {
    pub path: String,
    pub bytes: u64,
    /// Hex SHA-256 of the file contents.
    pub sha256: String,
}

/// Paths relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifacts {
    pub checkpoint: String,
    pub epoch_log: String,
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    pub k: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_nmi: Option<f64>,
    pub warmup_ce: Vec<f64>,
    /// Clustering of the evaluation samples with the best encoder.
    pub eval: Option<EvalReport>,
}

pub fn config_map(config: &TrainConfig) -> BTreeMap<String, String> {
    CONFIG_KEYS
        .iter()
        .map(|&k| (k.to_owned(), config.get(k).expect("listed key")))
        .collect()
}

impl DatasetFingerprint {
    pub fn of_bytes(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }

    /// Fails unless `bytes` hash to the recorded digest.
    pub fn verify(&self, bytes: &[u8]) -> Result<()> {
        let actual = hex::encode(Sha256::digest(bytes));
        if actual != self.sha256 {
            bail!("dataset hash {actual} does not match manifest {}", self.sha256);
        }
        Ok(())
    }
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.format != FORMAT || m.version != VERSION {
            bail!("{} is not a version {VERSION} run manifest", path.display());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_detects_changes() {
        let f = DatasetFingerprint::of_bytes(Path::new("d.jsonl"), b"abc");
        assert_eq!(
            f.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        f.verify(b"abc").unwrap();
        assert!(f.verify(b"abd").is_err());
    }

    #[test]
    fn config_map_covers_every_key() {
        let m = config_map(&TrainConfig::default());
        assert_eq!(m.len(), CONFIG_KEYS.len());
        let text: String = m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        assert_eq!(TrainConfig::from_text(&text).unwrap(), TrainConfig::default());
    }
}
