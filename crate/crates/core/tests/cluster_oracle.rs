//! Clustering checked against brute-force agglomeration and planted
//! structure.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fcurve::basis::{make_basis, KnotScheme};
use fcurve::cluster::{
    adjusted_rand_index, hierarchical, kmeans, kmeans_single, semimetric_matrix, two_stage, DistanceMatrix,
    Feature, KMeansConfig, Linkage,
};
use fcurve::fpca::fpca;
use fcurve::smooth::{default_lambda_grid, select_lambda, FunctionalDataset};
use fcurve::synthetic::three_template_curves;

fn blobs(n_per: usize, centers: &[[f64; 2]], spread: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per * centers.len();
    let mut m = DMatrix::zeros(n, 2);
    let mut labels = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for i in 0..n_per {
            let row = k * n_per + i;
            m[(row, 0)] = c[0] + spread * rng.random_range(-1.0..1.0);
            m[(row, 1)] = c[1] + spread * rng.random_range(-1.0..1.0);
            labels.push(k);
        }
    }
    (m, labels)
}

fn euclid(points: &DMatrix<f64>) -> DistanceMatrix {
    DistanceMatrix::from_fn(points.nrows(), |i, j| (points.row(i) - points.row(j)).norm())
}

fn sse(points: &DMatrix<f64>, members: &[usize]) -> f64 {
    let sub = points.select_rows(members.iter());
    let c = sub.row_mean();
    sub.row_iter().map(|r| (r - &c).norm_squared()).sum()
}

/// O(n⁴) agglomeration that recomputes every cluster distance from the
/// original points at each step.
fn brute_force(points: &DMatrix<f64>, linkage: Linkage, k: usize) -> Vec<usize> {
    let n = points.nrows();
    let d = |i: usize, j: usize| (points.row(i) - points.row(j)).norm();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ca, cb) = (&clusters[a], &clusters[b]);
                let cost = match linkage {
                    Linkage::Complete => ca.iter().flat_map(|&i| cb.iter().map(move |&j| d(i, j))).fold(0.0, f64::max),
                    Linkage::Average => {
                        ca.iter().flat_map(|&i| cb.iter().map(move |&j| d(i, j))).sum::<f64>()
                            / (ca.len() * cb.len()) as f64
                    }
                    Linkage::Ward => {
                        let merged: Vec<usize> = ca.iter().chain(cb).copied().collect();
                        sse(points, &merged) - sse(points, ca) - sse(points, cb)
                    }
                };
                if cost < best.0 {
                    best = (cost, a, b);
                }
            }
        }
        let absorbed = clusters.remove(best.2);
        clusters[best.1].extend(absorbed);
    }
    let mut labels = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = c;
        }
    }
    labels
}

#[test]
fn hierarchical_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..6 {
        let n = 25;
        let points = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let dist = euclid(&points);
        for linkage in [Linkage::Ward, Linkage::Complete, Linkage::Average] {
            for k in [2, 4, 7] {
                let ours = hierarchical(&dist, linkage, k).unwrap();
                let oracle = brute_force(&points, linkage, k);
                let ari = adjusted_rand_index(&ours.assignments, &oracle);
                assert_eq!(ari, 1.0, "trial {trial} {linkage:?} k={k}");
                assert_eq!(ours.k, k);
            }
        }
    }
}

#[test]
fn hierarchical_ignores_unit_order() {
    let (points, _) = blobs(12, &[[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]], 1.2, 2);
    let n = points.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let shuffled = points.select_rows(perm.iter());
    for linkage in [Linkage::Ward, Linkage::Complete, Linkage::Average] {
        let a = hierarchical(&euclid(&points), linkage, 3).unwrap();
        let b = hierarchical(&euclid(&shuffled), linkage, 3).unwrap();
        let back: Vec<usize> = {
            let mut v = vec![0; n];
            for (pos, &orig) in perm.iter().enumerate() {
                v[orig] = b.assignments[pos];
            }
            v
        };
        assert_eq!(adjusted_rand_index(&a.assignments, &back), 1.0);
        assert!((a.diagnostic - b.diagnostic).abs() < 1e-12);
    }
}

#[test]
fn kmeans_recovers_blobs_and_never_raises_inertia() {
    let (points, truth) = blobs(30, &[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]], 1.0, 5);
    let part = kmeans(&points, 4, 1, 20).unwrap();
    assert_eq!(adjusted_rand_index(&part.assignments, &truth), 1.0);
    assert_eq!(part.sizes, vec![30; 4]);
    let cfg = KMeansConfig::default();
    for seed in 0..20 {
        let run = kmeans_single(&points, 4, seed, &cfg).unwrap();
        for w in run.trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        // the best-of-restarts inertia is never beaten by a single run
        assert!(part.diagnostic <= run.inertia * (1.0 + 1e-12));
    }
}

#[test]
fn ari_reference_values() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    // pairs: 1 together in both, 3 in the first labeling, 2 in the second
    let ari = adjusted_rand_index(&[0, 0, 0, 1], &[0, 0, 1, 1]);
    let (index, rows, cols, total) = (1.0, 3.0, 2.0, 6.0);
    let expected = rows * cols / total;
    assert!((ari - (index - expected) / (0.5 * (rows + cols) - expected)).abs() < 1e-15);
    assert!(adjusted_rand_index(&[0, 1, 0, 1, 0, 1], &[0, 0, 0, 1, 1, 1]) < 0.0);
}

fn template_dataset(n_per: usize, seed: u64) -> (FunctionalDataset, Vec<usize>) {
    let (curves, labels) = three_template_curves(n_per, 2e-4, seed);
    let basis = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    let ages: Vec<f64> = (0..=110).map(f64::from).collect();
    let grid = default_lambda_grid();
    let rows: Vec<Vec<f64>> = curves
        .iter()
        .map(|y| select_lambda(y, &ages, &basis, &grid).unwrap().best.coefficients.as_slice().to_vec())
        .collect();
    let p = basis.dim();
    let coefs = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    (FunctionalDataset::from_coefficients(basis, coefs).unwrap(), labels)
}

#[test]
fn both_methods_recover_template_clusters() {
    let (ds, truth) = template_dataset(20, 3);
    let res = fpca(&ds).unwrap();
    let a = two_stage(&ds, Feature::FpcaScores(4), 3, 1).unwrap();
    let b = two_stage(&ds, Feature::Coefficients, 3, 1).unwrap();
    let c = hierarchical(&semimetric_matrix(&res, 4).unwrap(), Linkage::Ward, 3).unwrap();
    for p in [&a, &b, &c] {
        assert_eq!(adjusted_rand_index(&p.assignments, &truth), 1.0);
    }
    assert_eq!(adjusted_rand_index(&a.assignments, &c.assignments), 1.0);
}
