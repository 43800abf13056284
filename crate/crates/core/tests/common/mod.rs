//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the code paths it checks: metrics are recomputed from
//! raw label vectors, gradients by central differences of loss values.

#![allow(dead_code)]

pub mod gradcheck;

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradient entries.
pub const FD_FLOOR: f64 = 1e-6;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.sample(StandardNormal))
}

pub fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m
}

/// Flat parameter vector with named segments, so one central-difference
/// loop covers every parameter block of a loss.
#[derive(Debug, Clone, Default)]
pub struct Params {
    pub values: Vec<f64>,
    blocks: Vec<(String, usize, Vec<usize>)>,
}

impl Params {
    pub fn push(&mut self, name: &str, shape: &[usize], data: impl IntoIterator<Item = f64>) {
        let start = self.values.len();
        self.values.extend(data);
        assert_eq!(self.values.len() - start, shape.iter().product::<usize>());
        self.blocks.push((name.to_owned(), start, shape.to_vec()));
    }

    pub fn push_matrix(&mut self, name: &str, m: &Array2<f64>) {
        self.push(name, &[m.nrows(), m.ncols()], m.iter().copied());
    }

    pub fn push_vector(&mut self, name: &str, v: &Array1<f64>) {
        self.push(name, &[v.len()], v.iter().copied());
    }

    fn block(&self, name: &str) -> (usize, &[usize]) {
        let (_, start, shape) = self
            .blocks
            .iter()
            .find(|(n, _, _)| n == name)
            .unwrap_or_else(|| panic!("no block {name}"));
        (*start, shape)
    }

    pub fn matrix(&self, name: &str) -> Array2<f64> {
        let (start, shape) = self.block(name);
        let len = shape[0] * shape[1];
        Array2::from_shape_vec((shape[0], shape[1]), self.values[start..start + len].to_vec()).unwrap()
    }

    pub fn vector(&self, name: &str) -> Array1<f64> {
        let (start, shape) = self.block(name);
        Array1::from(self.values[start..start + shape[0]].to_vec())
    }
}

/// Worst entry-wise relative error between `analytic` and central
/// differences of `f` around `at`.
pub fn max_relative_error(at: &Params, analytic: &[f64], f: impl Fn(&Params) -> f64) -> f64 {
    assert_eq!(at.values.len(), analytic.len());
    let mut probe = at.clone();
    let mut worst = 0.0f64;
    for i in 0..at.values.len() {
        let base = at.values[i];
        probe.values[i] = base + FD_STEP;
        let up = f(&probe);
        probe.values[i] = base - FD_STEP;
        let down = f(&probe);
        probe.values[i] = base;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

fn densify(labels: &[usize]) -> Vec<usize> {
    let mut seen: HashMap<usize, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(*l).or_insert(next)
        })
        .collect()
}

/// NMI with arithmetic-mean normalization, from empirical distributions.
pub fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    let mut cab: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *cab.entry((x, y)).or_default() += 1;
    }
    let p = |c: usize| c as f64 / n;
    let h = |counts: &HashMap<usize, usize>| -counts.values().map(|&c| p(c) * p(c).ln()).sum::<f64>();
    let (ha, hb) = (h(&ca), h(&cb));
    if ha == 0.0 && hb == 0.0 {
        return 0.0;
    }
    let mi: f64 = cab
        .iter()
        .map(|(&(x, y), &c)| p(c) * (p(c) / (p(ca[&x]) * p(cb[&y]))).ln())
        .sum();
    mi / (0.5 * (ha + hb))
}

/// ARI from explicit enumeration of sample pairs.
pub fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (both * neither - only_a * only_b) / denom
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best accuracy over every one-to-one cluster → class mapping.
pub fn acc_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    let t = densify(truth);
    let p = densify(pred);
    let size = t.iter().chain(&p).max().unwrap() + 1;
    permutations(size)
        .iter()
        .map(|m| t.iter().zip(&p).filter(|(t, p)| m[**p] == **t).count())
        .max()
        .unwrap() as f64
        / truth.len() as f64
}

/// Minimum assignment cost over all permutations of a square matrix.
pub fn brute_force_assignment(cost: &Array2<f64>) -> f64 {
    permutations(cost.nrows())
        .iter()
        .map(|p| p.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Array2<f64> {
    let mut q = gaussian_matrix(rng, dim, dim);
    for i in 0..dim {
        for j in 0..i {
            let proj = q.row(i).dot(&q.row(j));
            let prev = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-proj, &prev);
        }
        let n = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|x| x / n);
    }
    q
}
