//! Lloyd's k-means with greedy k-means++ seeding and restarts, the Hungarian algorithm for
//! minimum-cost assignment, and cluster-count estimation by size pruning.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::vecops::squared_distance;
use crate::{RapError, Result};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_DROP_RATIO: f64 = 0.5;
/// Restarts used by [`kmeans_restarts`] callers in this crate.
pub const DEFAULT_N_INIT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster index of every point, each `< k`.
    pub labels: Vec<usize>,
    /// `k × d`
    pub centroids: Array2<f64>,
    /// Sum of squared distances from points to their centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, non-increasing.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Runs k-means on the rows of `points`.
///
/// Seeding is greedy k-means++ driven by `seed`. Iteration stops once no centroid
/// moves by `tol` or more, or after `max_iter` updates. Ties in assignment go
/// to the lowest cluster index. A cluster left empty after an update is
/// reseeded at the point farthest from its assigned centroid.
pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    let n = points.nrows();
    if k == 0 {
        return Err(RapError::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(RapError::TooManyClusters { k, points: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;

    let (mut labels, mut dists) = assign(points, centroids.view());
    history.push(dists.iter().sum::<f64>());

    while iterations < max_iter {
        iterations += 1;
        let mut updated = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &l) in points.axis_iter(Axis(0)).zip(&labels) {
            updated.row_mut(l).scaled_add(1.0, &row);
            counts[l] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                updated.row_mut(c).mapv_inplace(|x| x / count as f64);
            } else {
                let far = argmax(&dists);
                updated.row_mut(c).assign(&points.row(far));
                dists[far] = 0.0;
            }
        }
        let shift = centroids
            .axis_iter(Axis(0))
            .zip(updated.axis_iter(Axis(0)))
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        (labels, dists) = assign(points, centroids.view());
        history.push(dists.iter().sum::<f64>());
        if shift < tol {
            break;
        }
    }

    Ok(ClusterAssignment {
        labels,
        inertia: *history.last().unwrap(),
        centroids,
        inertia_history: history,
        iterations,
    })
}

/// Best of `n_init` [`kmeans`] runs by final inertia; the earliest run
/// wins ties. Run seeds are drawn from `seed`.
pub fn kmeans_restarts(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    n_init: usize,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    if n_init == 0 {
        return Err(RapError::InvalidArgument("n_init must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..n_init {
        let run = kmeans(points, k, rng.random(), max_iter, tol)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Greedy k-means++: each new seed is the best of `2 + ⌊ln k⌋` candidates
/// drawn with probability proportional to squared distance, judged by the
/// resulting potential.
fn kmeans_plus_plus(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .axis_iter(Axis(0))
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                sample_weighted(&d2, rng.random::<f64>() * total)
            } else {
                rng.random_range(0..n)
            };
            let candidate: Vec<f64> = points
                .axis_iter(Axis(0))
                .zip(&d2)
                .map(|(p, &d)| d.min(squared_distance(p, points.row(pick))))
                .collect();
            let potential: f64 = candidate.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, candidate, pick));
            }
        }
        let (_, next, pick) = best.expect("at least one trial");
        centroids.row_mut(c).assign(&points.row(pick));
        d2 = next;
    }
    centroids
}

/// First index whose cumulative weight exceeds `target`, skipping zero weights.
fn sample_weighted(weights: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > target && w > 0.0 {
            return i;
        }
    }
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// Nearest-centroid labels and squared distances; lowest index wins ties.
fn assign(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> (Vec<usize>, Vec<f64>) {
    points
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|p| nearest(p, centroids))
        .unzip()
}

pub(crate) fn nearest(p: ndarray::ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = squared_distance(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row → column matching produced by [`hungarian`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMapping {
    /// `map[row]` is the matched column, `None` when the row is unmatched
    /// (only produced by callers that strip padding).
    pub map: Vec<Option<usize>>,
    pub total_cost: f64,
}

/// Minimum-cost perfect assignment on a square cost matrix, O(n³).
pub fn hungarian(cost: ArrayView2<f64>) -> Result<AssignmentMapping> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(RapError::ShapeMismatch(format!(
            "hungarian needs a square matrix, got {}×{}",
            n,
            cost.ncols()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(RapError::InvalidArgument(
            "cost matrix has non-finite entries".into(),
        ));
    }
    if n == 0 {
        return Ok(AssignmentMapping {
            map: Vec::new(),
            total_cost: 0.0,
        });
    }

    // Shortest augmenting paths with row/column potentials; index 0 is a
    // virtual column used as the root of each search.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let slack = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut map = vec![None; n];
    for j in 1..=n {
        map[col_owner[j] - 1] = Some(j - 1);
    }
    let total_cost = map.iter().enumerate().map(|(i, j)| cost[[i, j.unwrap()]]).sum();
    Ok(AssignmentMapping { map, total_cost })
}

/// Estimates the number of clusters: runs k-means (with restarts) with `k_init` clusters and
/// counts those holding at least `drop_ratio · n / k_init` points.
pub fn estimate_k(points: ArrayView2<f64>, k_init: usize, drop_ratio: f64, seed: u64) -> Result<usize> {
    if !(drop_ratio > 0.0 && drop_ratio < 1.0) {
        return Err(RapError::InvalidArgument(format!(
            "drop_ratio must lie in (0, 1), got {drop_ratio}"
        )));
    }
    let assignment = kmeans_restarts(
        points,
        k_init,
        seed,
        DEFAULT_N_INIT,
        DEFAULT_MAX_ITER,
        DEFAULT_TOL,
    )?;
    let threshold = drop_ratio * points.nrows() as f64 / k_init as f64;
    let kept = assignment
        .sizes()
        .into_iter()
        .filter(|&s| s as f64 >= threshold)
        .count();
    if kept == 0 {
        return Err(RapError::EstimationFailed { threshold });
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_two_pairs() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]];
        let a = kmeans(pts.view(), 2, 3, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
        let low = a.labels[0];
        assert!((a.centroids[[low, 0]] - 0.05).abs() < 1e-12);
        assert!((a.centroids[[1 - low, 0]] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = array![[1.0, 2.0], [3.0, 2.0], [2.0, 5.0]];
        let a = kmeans(pts.view(), 1, 0, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!(a.labels.iter().all(|&l| l == 0));
        assert!((a.centroids[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((a.centroids[[0, 1]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_k() {
        let pts = array![[1.0], [2.0]];
        assert!(matches!(
            kmeans(pts.view(), 3, 0, 10, 1e-6),
            Err(RapError::TooManyClusters { k: 3, points: 2 })
        ));
        assert!(kmeans(pts.view(), 0, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn duplicate_points_keep_k_clusters() {
        let pts = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [5.0, 5.0]];
        let a = kmeans(pts.view(), 3, 9, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_eq!(a.k(), 3);
        assert!(a.labels.iter().all(|&l| l < 3));
        assert!(a.inertia.abs() < 1e-12);
    }

    #[test]
    fn hungarian_small_cases() {
        let m = hungarian(array![[0.0, 9.0], [9.0, 0.0]].view()).unwrap();
        assert_eq!(m.map, vec![Some(0), Some(1)]);
        assert_eq!(m.total_cost, 0.0);
        let m = hungarian(array![[4.0, 1.0], [2.0, 3.0]].view()).unwrap();
        assert_eq!(m.map, vec![Some(1), Some(0)]);
        assert_eq!(m.total_cost, 3.0);
        assert!(hungarian(Array2::<f64>::zeros((2, 3)).view()).is_err());
        assert!(hungarian(array![[f64::NAN]].view()).is_err());
    }

    #[test]
    fn estimate_k_validates_ratio() {
        let pts = array![[1.0], [2.0]];
        assert!(estimate_k(pts.view(), 2, 1.0, 0).is_err());
        assert!(estimate_k(pts.view(), 2, 0.0, 0).is_err());
    }
}
