//! Prototype-guided representation learning for discovering new categories
//! among partially labeled feature vectors.
//!
//! The pipeline trains a small normalized encoder with a joint objective:
//! mixup-robust prototypical attraction, distance-weighted prototype
//! dispersion and cross-entropy on the labeled known classes. Embeddings are
//! then clustered with k-means and scored with NMI, ARI and Hungarian-matched
//! accuracy.
//!
//! Module map:
//!
//! * [`dataset`]: JSONL ingestion, token mean-pooling, synthetic mixtures.
//! * [`encoder`]: affine + tanh + L2-normalization head and linear classifier.
//! * [`clustering`]: k-means++, Hungarian assignment, cluster-count estimation.
//! * [`prototypes`]: prototype generation, EMA tracking, compactness statistics.
//! * [`losses`]: every training objective with analytic gradients.
//! * [`metrics`]: NMI, ARI and ACC.
//! * [`trainer`]: warmup, pseudo-labeling, joint optimization, inference.

pub mod checkpoint;
pub mod clustering;
pub mod config;
pub mod dataset;
pub mod encoder;
mod error;
pub mod losses;
pub mod metrics;
pub mod prototypes;
pub mod trainer;
pub(crate) mod vecops;

pub use error::{RapError, Result};
