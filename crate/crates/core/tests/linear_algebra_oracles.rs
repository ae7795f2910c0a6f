//! PCA and k-means checked against independent references.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use semswarm_core::ecosystem::{kmeans, pca};
use semswarm_core::linalg::{jacobi_eigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
use semswarm_core::rng::rng_from_seed;

fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    // random linear mix so the covariance is far from diagonal
    let mix: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..d).map(|i| (0..d).map(|k| mix[i * d + k] * z[k]).sum()).collect()
        })
        .collect()
}

fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    DMatrix::from_fn(d, d, |i, j| {
        rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n as f64 - 1.0)
    })
}

#[test]
fn pca_matches_dense_eigensolver_on_100_covariances() {
    for seed in 0..100 {
        let rows = random_rows(seed, 40, 6);
        let ours = pca(&rows, 6).unwrap();
        let eig = SymmetricEigen::new(sample_covariance(&rows));
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (k, &o) in order.iter().enumerate() {
            let want = eig.eigenvalues[o];
            assert!((ours.eigenvalues[k] - want).abs() < 1e-8, "seed {seed} value {k}: {} vs {want}", ours.eigenvalues[k]);
            let reference = eig.eigenvectors.column(o);
            let dot: f64 = (0..6).map(|i| ours.components[k][i] * reference[i]).sum();
            for i in 0..6 {
                // eigenvectors agree up to sign
                let diff = ours.components[k][i] - dot.signum() * reference[i];
                assert!(diff.abs() < 1e-8, "seed {seed} component {k}");
            }
        }
    }
}

#[test]
fn jacobi_matches_dense_eigensolver_on_random_symmetric_matrices() {
    let mut rng = rng_from_seed(77);
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-5.0..5.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let ours = jacobi_eigen(&a, n, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).unwrap();
        let mut want: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &a)).eigenvalues.iter().copied().collect();
        want.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ours.values.iter().zip(&want) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}

fn two_blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let centres = [[0.25, 0.5], [0.75, 0.5]];
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..100 {
        let c = i % 2;
        data.push(vec![centres[c][0] + noise.sample(&mut rng), centres[c][1] + noise.sample(&mut rng)]);
        labels.push(c);
    }
    (data, labels)
}

#[test]
fn kmeans_separates_two_tight_blobs_on_20_seeds() {
    for seed in 0..20 {
        let (data, truth) = two_blobs(seed);
        let km = kmeans(&data, 2, seed).unwrap();
        // cluster ids are arbitrary; map through the first point
        let flip = km.assignments[0] != truth[0];
        let errors = km
            .assignments
            .iter()
            .zip(&truth)
            .filter(|(&a, &t)| (if flip { 1 - a } else { a }) != t)
            .count();
        assert_eq!(errors, 0, "seed {seed}");
    }
}

proptest! {
    #[test]
    fn pca_components_are_orthonormal(seed in 0u64..10_000, n in 3usize..30) {
        let p = pca(&random_rows(seed, n, 6), 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in 0u64..10_000, k in 1usize..6) {
        let mut rng = rng_from_seed(seed);
        let data: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let km = kmeans(&data, k, seed).unwrap();
        for w in km.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", km.inertia_trace);
        }
    }
}
