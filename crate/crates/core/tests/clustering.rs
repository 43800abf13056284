mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{acc_oracle, brute_force_assignment, gaussian_matrix, random_orthogonal};
use rap_core::clustering::{
    estimate_k, hungarian, kmeans, DEFAULT_DROP_RATIO, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use rap_core::dataset::{feature_matrix, synth_mixture, truth_indices, SynthConfig};

fn blobs(classes: usize, n_per_class: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let data = synth_mixture(&SynthConfig {
        classes,
        n_per_class,
        dim: 8,
        sep: 10.0,
        sigma: 1.0,
        labeled_fraction: 0.5,
        known_fraction: 0.5,
        seed,
    })
    .unwrap();
    let samples: Vec<_> = data.labeled.iter().chain(&data.unlabeled).cloned().collect();
    let names = data.all_class_names();
    let truth = truth_indices(&samples, &names)
        .into_iter()
        .map(Option::unwrap)
        .collect();
    (feature_matrix(&samples, data.dim()), truth)
}

#[test]
fn separated_mixture_is_recovered() {
    for seed in 0..3 {
        let (x, truth) = blobs(4, 50, seed);
        let c = kmeans(x.view(), 4, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let acc = acc_oracle(&truth, &c.labels);
        assert!(acc >= 0.99, "seed {seed}: acc {acc}");
    }
}

#[test]
fn inertia_matches_assignment() {
    let (x, _) = blobs(3, 20, 4);
    let c = kmeans(x.view(), 3, 1, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    let mut inertia = 0.0;
    for (i, &l) in c.labels.iter().enumerate() {
        let d = &x.row(i) - &c.centroids.row(l);
        inertia += d.dot(&d);
    }
    assert!((inertia - c.inertia).abs() < 1e-9 * inertia.max(1.0));
    assert_eq!(c.sizes().iter().sum::<usize>(), 60);
}

#[test]
fn kmeans_is_deterministic() {
    let (x, _) = blobs(5, 20, 9);
    let a = kmeans(x.view(), 7, 3, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    let b = kmeans(x.view(), 7, 3, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.centroids, b.centroids);
}

#[test]
fn too_many_clusters_is_an_error() {
    let x = array![[0.0], [1.0]];
    assert!(kmeans(x.view(), 3, 0, DEFAULT_MAX_ITER, DEFAULT_TOL).is_err());
}

#[test]
fn hungarian_worked_example() {
    let cost = array![[4.0, 1.0], [2.0, 3.0]];
    let m = hungarian(cost.view()).unwrap();
    assert_eq!(m.map, vec![Some(1), Some(0)]);
    assert_eq!(m.total_cost, 3.0);
}

#[test]
fn hungarian_rejects_non_square() {
    let cost = Array2::<f64>::zeros((2, 3));
    assert!(hungarian(cost.view()).is_err());
}

#[test]
fn estimate_k_keeps_true_k() {
    for seed in 0..5 {
        let (x, _) = blobs(4, 100, seed);
        assert_eq!(
            estimate_k(x.view(), 4, DEFAULT_DROP_RATIO, seed).unwrap(),
            4,
            "seed {seed}"
        );
    }
}

#[test]
fn estimate_k_validates_inputs() {
    let (x, _) = blobs(2, 5, 0);
    assert!(estimate_k(x.view(), 11, 0.5, 0).is_err());
    assert!(estimate_k(x.view(), 2, 1.0, 0).is_err());
    assert!(estimate_k(x.view(), 2, 0.0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_is_optimal(seed in 0u64..100_000, n in 1usize..=7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(-5.0..20.0));
        let m = hungarian(cost.view()).unwrap();
        let picked: f64 = m.map.iter().enumerate().map(|(r, c)| cost[[r, c.unwrap()]]).sum();
        let mut cols: Vec<usize> = m.map.iter().map(|c| c.unwrap()).collect();
        cols.sort();
        prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
        prop_assert!((picked - m.total_cost).abs() < 1e-9);
        prop_assert!((m.total_cost - brute_force_assignment(&cost)).abs() < 1e-9);
        let identity: f64 = (0..n).map(|i| cost[[i, i]]).sum();
        prop_assert!(m.total_cost <= identity + 1e-9);
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in 0u64..100_000, n in 2usize..40, k in 1usize..6) {
        let k = k.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_matrix(&mut rng, n, 3);
        let c = kmeans(x.view(), k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        for w in c.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(c.labels.iter().all(|&l| l < k));
    }

    #[test]
    fn kmeans_labels_survive_rotation(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _) = blobs(3, 15, seed % 50);
        let q = random_orthogonal(&mut rng, x.ncols());
        let rotated = x.dot(&q.t());
        let a = kmeans(x.view(), 3, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let b = kmeans(rotated.view(), 3, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        prop_assert_eq!(a.labels, b.labels);
    }
}
