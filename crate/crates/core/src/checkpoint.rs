//! Versioned JSON checkpoints of a trained model.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::encoder::{ClassifierHead, EncoderHead};
use crate::prototypes::PrototypeSet;
use crate::trainer::TrainedModel;
use crate::{RapError, Result};

pub const FORMAT: &str = "rap-checkpoint";
pub const VERSION: u32 = 1;

/// Row-major nested-list matrix, so checkpoints stay readable by any JSON tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Matrix(pub Vec<Vec<f64>>);

impl Matrix {
    fn from_array(a: &Array2<f64>) -> Self {
        Matrix(a.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    fn to_array(&self, what: &str, shape: (usize, usize)) -> Result<Array2<f64>> {
        let (rows, cols) = shape;
        if self.0.len() != rows || self.0.iter().any(|r| r.len() != cols) {
            return Err(RapError::Checkpoint(format!("{what} is not {rows}×{cols}")));
        }
        let flat: Vec<f64> = self.0.iter().flatten().copied().collect();
        Ok(Array2::from_shape_vec(shape, flat).expect("shape checked"))
    }
}

fn vector(v: &[f64], what: &str, len: usize) -> Result<Array1<f64>> {
    if v.len() != len {
        return Err(RapError::Checkpoint(format!(
            "{what} has {} entries, expected {len}",
            v.len()
        )));
    }
    Ok(Array1::from(v.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub input_dim: usize,
    pub embed_dim: usize,
    /// Number of prototypes and inference clusters.
    pub k: usize,
    pub best_epoch: usize,
    /// Known class names in classifier-row order.
    pub known_classes: Vec<String>,
    pub total_classes: usize,
    /// Configuration in the `key = value` text format.
    pub config: String,
    pub encoder_weight: Matrix,
    pub encoder_bias: Vec<f64>,
    pub classifier_weight: Matrix,
    pub classifier_bias: Vec<f64>,
    pub prototypes: Matrix,
    pub prototype_momentum: f64,
}

/// Model parameters restored from a [`Checkpoint`].
#[derive(Debug, Clone)]
pub struct RestoredModel {
    pub encoder: EncoderHead,
    pub classifier: ClassifierHead,
    pub prototypes: PrototypeSet,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(
        model: &TrainedModel,
        config: &TrainConfig,
        known_classes: &[String],
        total_classes: usize,
    ) -> Self {
        Self {
            format: FORMAT.to_owned(),
            version: VERSION,
            seed: config.seed,
            input_dim: model.encoder.input_dim(),
            embed_dim: model.encoder.output_dim(),
            k: model.k,
            best_epoch: model.best_epoch,
            known_classes: known_classes.to_vec(),
            total_classes,
            config: config.to_text(),
            encoder_weight: Matrix::from_array(&model.encoder.weight),
            encoder_bias: model.encoder.bias.to_vec(),
            classifier_weight: Matrix::from_array(&model.classifier.weight),
            classifier_bias: model.classifier.bias.to_vec(),
            prototypes: Matrix::from_array(&model.prototypes.mu),
            prototype_momentum: model.prototypes.momentum,
        }
    }

    pub fn restore(&self) -> Result<RestoredModel> {
        if self.format != FORMAT {
            return Err(RapError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(RapError::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        let (d, h, k) = (self.input_dim, self.embed_dim, self.k);
        let known = self.known_classes.len();
        let encoder = EncoderHead {
            weight: self.encoder_weight.to_array("encoder_weight", (h, d))?,
            bias: vector(&self.encoder_bias, "encoder_bias", h)?,
        };
        let classifier = ClassifierHead {
            weight: self.classifier_weight.to_array("classifier_weight", (known, h))?,
            bias: vector(&self.classifier_bias, "classifier_bias", known)?,
        };
        let stored = self.prototypes.to_array("prototypes", (k, h))?;
        if stored
            .rows()
            .into_iter()
            .any(|r| (r.dot(&r).sqrt() - 1.0).abs() > 1e-9)
        {
            return Err(RapError::Checkpoint("prototypes are not unit norm".into()));
        }
        let mut prototypes = PrototypeSet::from_vectors(stored.clone(), self.prototype_momentum)?;
        prototypes.mu = stored;
        if !encoder.is_finite() || !classifier.is_finite() {
            return Err(RapError::Checkpoint("parameters are not finite".into()));
        }
        Ok(RestoredModel {
            encoder,
            classifier,
            prototypes,
            config: TrainConfig::from_text(&self.config)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| RapError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RapError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
