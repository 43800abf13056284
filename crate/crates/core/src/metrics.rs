//! Clustering quality: normalized mutual information, adjusted Rand index
//! and Hungarian-matched accuracy.
//!
//! Labels are arbitrary `usize` values; both partitions are re-indexed
//! densely (sorted order) before counting. Entropies use natural logarithms.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clustering::{hungarian, AssignmentMapping};
use crate::{RapError, Result};

/// Joint counts of ground-truth classes (rows) and predicted clusters (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub counts: Array2<usize>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub total: usize,
    /// Original label value of each row.
    pub classes: Vec<usize>,
    /// Original label value of each column.
    pub clusters: Vec<usize>,
}

fn dense_index(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let values: BTreeMap<usize, usize> = labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    let idx = labels.iter().map(|l| values[l]).collect();
    (idx, values.into_keys().collect())
}

impl Contingency {
    pub fn new(y_gt: &[usize], y_p: &[usize]) -> Result<Self> {
        if y_gt.len() != y_p.len() {
            return Err(RapError::LengthMismatch {
                left: y_gt.len(),
                right: y_p.len(),
            });
        }
        if y_gt.is_empty() {
            return Err(RapError::InvalidArgument("label vectors are empty".into()));
        }
        let (gi, classes) = dense_index(y_gt);
        let (pi, clusters) = dense_index(y_p);
        let mut counts = Array2::zeros((classes.len(), clusters.len()));
        for (&g, &p) in gi.iter().zip(&pi) {
            counts[[g, p]] += 1;
        }
        let row_sums = counts.rows().into_iter().map(|r| r.sum()).collect();
        let col_sums = counts.columns().into_iter().map(|c| c.sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: y_gt.len(),
            classes,
            clusters,
        })
    }
}

fn entropy(sums: &[usize], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
/// Two single-cluster partitions score 0.
pub fn nmi(y_gt: &[usize], y_p: &[usize]) -> Result<f64> {
    let t = Contingency::new(y_gt, y_p)?;
    let n = t.total as f64;
    let h_gt = entropy(&t.row_sums, n);
    let h_p = entropy(&t.col_sums, n);
    if h_gt == 0.0 && h_p == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for ((i, j), &c) in t.counts.indexed_iter() {
        if c == 0 {
            continue;
        }
        let c = c as f64;
        mi += c / n * (c * n / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
    }
    Ok((mi / (0.5 * (h_gt + h_p))).clamp(0.0, 1.0))
}

fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table. Returns 1 when the
/// expected-index correction leaves a zero denominator.
pub fn ari(y_gt: &[usize], y_p: &[usize]) -> Result<f64> {
    let t = Contingency::new(y_gt, y_p)?;
    let total_pairs = pairs(t.total);
    if total_pairs == 0.0 {
        return Ok(1.0);
    }
    let index: f64 = t.counts.iter().map(|&c| pairs(c)).sum();
    let sum_u: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let sum_v: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = sum_u * sum_v / total_pairs;
    let max_index = 0.5 * (sum_u + sum_v);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Accuracy under the best one-to-one cluster → class mapping.
///
/// The mapping's rows are predicted clusters and its columns ground-truth
/// classes, both in sorted order of their label values; clusters matched
/// only to padding map to `None`.
pub fn acc(y_gt: &[usize], y_p: &[usize]) -> Result<(f64, AssignmentMapping)> {
    let t = Contingency::new(y_gt, y_p)?;
    let (n_cls, n_clu) = (t.classes.len(), t.clusters.len());
    let size = n_cls.max(n_clu);
    let max_count = t.counts.iter().copied().max().unwrap_or(0) as f64;
    // Padding entries are zero overlap, i.e. maximum cost.
    let cost = Array2::from_shape_fn((size, size), |(p, g)| {
        let overlap = if p < n_clu && g < n_cls {
            t.counts[[g, p]] as f64
        } else {
            0.0
        };
        max_count - overlap
    });
    let solved = hungarian(cost.view())?;
    let mut correct = 0usize;
    let mut map = vec![None; n_clu];
    for (p, slot) in map.iter_mut().enumerate() {
        if let Some(g) = solved.map[p].filter(|&g| g < n_cls) {
            *slot = Some(g);
            correct += t.counts[[g, p]];
        }
    }
    Ok((
        correct as f64 / t.total as f64,
        AssignmentMapping {
            map,
            total_cost: solved.total_cost,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmi: f64,
    pub ari: f64,
    pub acc: f64,
    /// Size of every predicted cluster, by cluster label value.
    pub cluster_sizes: BTreeMap<usize, usize>,
    /// `(cluster label, class label)` pairs chosen by the ACC matching.
    pub mapping: Vec<(usize, usize)>,
}

pub fn evaluate(y_gt: &[usize], y_p: &[usize]) -> Result<MetricsReport> {
    let t = Contingency::new(y_gt, y_p)?;
    let (accuracy, m) = acc(y_gt, y_p)?;
    let mapping = m
        .map
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| (t.clusters[p], t.classes[g])))
        .collect();
    let cluster_sizes = t
        .clusters
        .iter()
        .copied()
        .zip(t.col_sums.iter().copied())
        .collect();
    Ok(MetricsReport {
        nmi: nmi(y_gt, y_p)?,
        ari: ari(y_gt, y_p)?,
        acc: accuracy,
        cluster_sizes,
        mapping,
    })
}
