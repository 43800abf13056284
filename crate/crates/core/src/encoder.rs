//! Trainable embedding head `z = tanh(Wx + b) / ‖tanh(Wx + b)‖` and a linear
//! classifier over the known classes, with hand-written backward passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;

use crate::vecops::norm;
use crate::{RapError, Result};

/// Pre-normalization norms below this are treated as degenerate.
pub const MIN_EMBEDDING_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderHead {
    /// `h_out × d`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Linear map from embeddings to known-class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `|known| × h_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Intermediates of one forward pass, consumed by [`EncoderHead::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array1<f64>,
    activation: Array1<f64>,
    norm: f64,
    output: Array1<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView1<'_, f64> {
        self.output.view()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

impl EncoderGrads {
    pub fn zeros(h_out: usize, d: usize) -> Self {
        Self {
            dw: Array2::zeros((h_out, d)),
            db: Array1::zeros(h_out),
        }
    }

    pub fn add_scaled(&mut self, other: &EncoderGrads, scale: f64) {
        self.dw.scaled_add(scale, &other.dw);
        self.db.scaled_add(scale, &other.db);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub dv: Array2<f64>,
    pub dc: Array1<f64>,
}

impl ClassifierGrads {
    pub fn zeros(classes: usize, h_out: usize) -> Self {
        Self {
            dv: Array2::zeros((classes, h_out)),
            dc: Array1::zeros(classes),
        }
    }
}

/// Gradients for every encoder and classifier parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
    pub dv: Array2<f64>,
    pub dc: Array1<f64>,
}

impl ParamGradients {
    pub fn zeros(encoder: &EncoderHead, classifier: &ClassifierHead) -> Self {
        Self {
            dw: Array2::zeros(encoder.weight.raw_dim()),
            db: Array1::zeros(encoder.bias.len()),
            dv: Array2::zeros(classifier.weight.raw_dim()),
            dc: Array1::zeros(classifier.bias.len()),
        }
    }

    pub fn add_encoder(&mut self, g: &EncoderGrads, scale: f64) {
        self.dw.scaled_add(scale, &g.dw);
        self.db.scaled_add(scale, &g.db);
    }

    pub fn add_classifier(&mut self, g: &ClassifierGrads, scale: f64) {
        self.dv.scaled_add(scale, &g.dv);
        self.dc.scaled_add(scale, &g.dc);
    }

    pub fn squared_norm(&self) -> f64 {
        self.dw
            .iter()
            .chain(&self.db)
            .chain(&self.dv)
            .chain(&self.dc)
            .map(|x| x * x)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.dw *= s;
        self.db *= s;
        self.dv *= s;
        self.dc *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.dw
            .iter()
            .chain(&self.db)
            .chain(&self.dv)
            .chain(&self.dc)
            .all(|x| x.is_finite())
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

impl EncoderHead {
    /// Fan-in scaled uniform initialization in `[-1/√d, 1/√d]`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, output_dim: usize) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weight = uniform_matrix(rng, output_dim, input_dim, bound);
        let bias = Array1::from_shape_fn(output_dim, |_| rng.random_range(-bound..=bound));
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(RapError::ShapeMismatch(format!(
                "encoder expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let activation = (self.weight.dot(&x) + &self.bias).mapv(f64::tanh);
        let n = norm(activation.view());
        if !(n >= MIN_EMBEDDING_NORM) {
            return Err(RapError::DegenerateEmbedding { norm: n });
        }
        let output = &activation / n;
        let cache = ForwardCache {
            input: x.to_owned(),
            activation,
            norm: n,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Back-propagates `dL/dz` to the parameters and the input.
    pub fn backward(&self, cache: &ForwardCache, d_z: ArrayView1<f64>) -> (EncoderGrads, Array1<f64>) {
        let d_pre = self.pre_activation_grad(cache, d_z);
        let dw = outer(d_pre.view(), cache.input.view());
        let dx = self.weight.t().dot(&d_pre);
        (EncoderGrads { dw, db: d_pre }, dx)
    }

    fn pre_activation_grad(&self, cache: &ForwardCache, d_z: ArrayView1<f64>) -> Array1<f64> {
        let z = &cache.output;
        // tangent-space projection (I − zzᵀ)/‖u‖, then tanh'
        let radial = z.dot(&d_z);
        let mut d_u = (&d_z - &(z * radial)) / cache.norm;
        Zip::from(&mut d_u)
            .and(&cache.activation)
            .for_each(|g, &u| *g *= 1.0 - u * u);
        d_u
    }

    /// Embeds every row of `x`; rows are processed in parallel.
    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = x
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|row| self.forward(row).map(|(z, _)| z))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&src);
        }
        Ok(out)
    }

    /// Forward pass over a batch, keeping caches for [`Self::backward_batch`].
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<ForwardCache>)> {
        let mut z = Array2::zeros((x.nrows(), self.output_dim()));
        let mut caches = Vec::with_capacity(x.nrows());
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let (zi, cache) = self.forward(row)?;
            z.row_mut(i).assign(&zi);
            caches.push(cache);
        }
        Ok((z, caches))
    }

    /// Sums the parameter gradients of every row of `d_z`.
    pub fn backward_batch(&self, caches: &[ForwardCache], d_z: ArrayView2<f64>) -> EncoderGrads {
        let mut grads = EncoderGrads::zeros(self.output_dim(), self.input_dim());
        for (cache, dz) in caches.iter().zip(d_z.axis_iter(Axis(0))) {
            if dz.iter().all(|&g| g == 0.0) {
                continue;
            }
            let d_pre = self.pre_activation_grad(cache, dz);
            accumulate_outer(&mut grads.dw, d_pre.view(), cache.input.view());
            grads.db += &d_pre;
        }
        grads
    }

    pub fn apply(&mut self, dw: &Array2<f64>, db: &Array1<f64>, learning_rate: f64) {
        self.weight.scaled_add(-learning_rate, dw);
        self.bias.scaled_add(-learning_rate, db);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, classes: usize) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weight = uniform_matrix(rng, classes, input_dim, bound);
        let bias = Array1::from_shape_fn(classes, |_| rng.random_range(-bound..=bound));
        Self { weight, bias }
    }

    pub fn classes(&self) -> usize {
        self.weight.nrows()
    }

    /// Logits `Vz + c`.
    pub fn classify(&self, z: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&z) + &self.bias
    }

    pub fn apply(&mut self, dv: &Array2<f64>, dc: &Array1<f64>, learning_rate: f64) {
        self.weight.scaled_add(-learning_rate, dv);
        self.bias.scaled_add(-learning_rate, dc);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

pub(crate) fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

pub(crate) fn accumulate_outer(target: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in target.axis_iter_mut(Axis(0)).zip(a.iter()) {
        row.scaled_add(ai, &b);
    }
}
