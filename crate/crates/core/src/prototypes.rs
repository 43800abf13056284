//! Class prototypes: unit-norm cluster means tracked with an exponential
//! moving average during training.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::vecops::{cosine, norm};
use crate::{RapError, Result};

const MIN_PROTOTYPE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// `C × h_out`, every row unit norm.
    pub mu: Array2<f64>,
    /// EMA momentum λ in `[0, 1]`.
    pub momentum: f64,
    pub trainable: bool,
}

impl PrototypeSet {
    /// Wraps raw vectors, normalizing each row.
    pub fn from_vectors(mut mu: Array2<f64>, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(RapError::InvalidArgument(format!(
                "momentum must lie in [0, 1], got {momentum}"
            )));
        }
        for (c, mut row) in mu.axis_iter_mut(Axis(0)).enumerate() {
            let n = norm(row.view());
            if !(n >= MIN_PROTOTYPE_NORM) {
                return Err(RapError::DegeneratePrototype { class: c, norm: n });
            }
            row.mapv_inplace(|x| x / n);
        }
        Ok(Self {
            mu,
            momentum,
            trainable: true,
        })
    }

    pub fn len(&self) -> usize {
        self.mu.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    /// `μ_c ← normalize(λ μ_c + (1 − λ) z)`.
    pub fn ema_update(&mut self, class: usize, z: ArrayView1<f64>) -> Result<()> {
        if class >= self.len() {
            return Err(RapError::InvalidArgument(format!(
                "class {class} out of range for {} prototypes",
                self.len()
            )));
        }
        let lambda = self.momentum;
        let mut row = self.mu.row_mut(class);
        let blended = &row * lambda + &z * (1.0 - lambda);
        let n = norm(blended.view());
        if !(n >= MIN_PROTOTYPE_NORM) {
            return Err(RapError::DegeneratePrototype { class, norm: n });
        }
        row.assign(&(blended / n));
        Ok(())
    }

    /// Gradient step followed by renormalization onto the sphere.
    pub fn apply_gradient(&mut self, d_mu: &Array2<f64>, learning_rate: f64) -> Result<()> {
        if !self.trainable {
            return Ok(());
        }
        self.mu.scaled_add(-learning_rate, d_mu);
        self.renormalize()
    }

    pub fn renormalize(&mut self) -> Result<()> {
        for (c, mut row) in self.mu.axis_iter_mut(Axis(0)).enumerate() {
            let n = norm(row.view());
            if !(n >= MIN_PROTOTYPE_NORM) {
                return Err(RapError::DegeneratePrototype { class: c, norm: n });
            }
            row.mapv_inplace(|x| x / n);
        }
        Ok(())
    }

    /// Index of the prototype with the highest dot product with `z`.
    pub fn nearest(&self, z: ArrayView1<f64>) -> usize {
        let sims = self.mu.dot(&z);
        let mut best = 0;
        for (c, &s) in sims.iter().enumerate() {
            if s > sims[best] {
                best = c;
            }
        }
        best
    }
}

/// Normalized per-cluster mean of `embeddings` grouped by `labels`.
pub fn generate(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    momentum: f64,
) -> Result<PrototypeSet> {
    if labels.len() != embeddings.nrows() {
        return Err(RapError::LengthMismatch {
            left: embeddings.nrows(),
            right: labels.len(),
        });
    }
    let mut sums = Array2::<f64>::zeros((classes, embeddings.ncols()));
    let mut counts = vec![0usize; classes];
    for (z, &l) in embeddings.axis_iter(Axis(0)).zip(labels) {
        if l >= classes {
            return Err(RapError::InvalidArgument(format!(
                "label {l} out of range for {classes} prototypes"
            )));
        }
        sums.row_mut(l).scaled_add(1.0, &z);
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(RapError::InvalidArgument(format!("cluster {empty} is empty")));
    }
    for (mut row, &count) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        row.mapv_inplace(|x| x / count as f64);
    }
    PrototypeSet::from_vectors(sums, momentum)
}

/// [`generate`] over the clusters of a k-means result.
pub fn generate_from_assignment(
    embeddings: ArrayView2<f64>,
    assignment: &ClusterAssignment,
    momentum: f64,
) -> Result<PrototypeSet> {
    generate(embeddings, &assignment.labels, assignment.k(), momentum)
}

/// Cosine-distance compactness and separation statistics (raw, not ×100).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactnessStats {
    /// Mean `1 − cos(z_i, μ_{label(i)})`.
    pub within: f64,
    /// Mean `1 − cos(μ_i, μ_j)` over unordered prototype pairs.
    pub between: f64,
}

pub fn within_between_stats(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<CompactnessStats> {
    if labels.len() != embeddings.nrows() {
        return Err(RapError::LengthMismatch {
            left: embeddings.nrows(),
            right: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= protos.len()) {
        return Err(RapError::InvalidArgument(format!("label {bad} has no prototype")));
    }
    let within = if labels.is_empty() {
        0.0
    } else {
        embeddings
            .axis_iter(Axis(0))
            .zip(labels)
            .map(|(z, &l)| 1.0 - cosine(z, protos.mu.row(l)))
            .sum::<f64>()
            / labels.len() as f64
    };
    let c = protos.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..c {
        for j in (i + 1)..c {
            total += 1.0 - cosine(protos.mu.row(i), protos.mu.row(j));
            pairs += 1;
        }
    }
    let between = if pairs == 0 { 0.0 } else { total / pairs as f64 };
    Ok(CompactnessStats { within, between })
}
