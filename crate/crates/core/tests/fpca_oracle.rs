//! FPCA checked against a principal component analysis of the curves
//! sampled on a dense grid, plus the semimetric identity.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fcurve::basis::{make_basis, KnotScheme};
use fcurve::cluster::semimetric_fpca;
use fcurve::fpca::{fpca, l2_norm};
use fcurve::ingest::Sex;
use fcurve::smooth::{default_lambda_grid, smooth_panel, FunctionalDataset, LambdaMode};
use fcurve::synthetic::mortality_panel;

mod common;
use common::{dense_pca, quadrature_matrix, simpson};

const COUNTRIES: [&str; 5] = ["AAA", "BBB", "CCC", "DDD", "EEE"];

fn dataset() -> FunctionalDataset {
    let panel = mortality_panel(&COUNTRIES, (1960, 1969), Sex::Female, 9).unwrap();
    let basis = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    smooth_panel(&panel, &basis, LambdaMode::Common, &default_lambda_grid()).unwrap()
}

#[test]
fn matches_dense_grid_pca() {
    let ds = dataset();
    assert_eq!(ds.n(), 50);
    let res = fpca(&ds).unwrap();
    let (t, w) = simpson(2001, 0.0, 110.0);
    let design = ds.basis.design(&t).unwrap();
    let x = &ds.coefficients * design.transpose();
    let dense = dense_pca(&x, &w);
    for l in 0..5 {
        let (a, b) = (res.eigenvalues[l], dense.values[l]);
        assert!((a - b).abs() < 1e-4 * b, "eigenvalue {l}: {a} vs {b}");
        let ours = &design * res.harmonics.column(l);
        let theirs = dense.functions.column(l);
        let sign = if ours.dot(&theirs) < 0.0 { -1.0 } else { 1.0 };
        let diff = &ours - theirs * sign;
        let err: f64 = diff.iter().zip(&w).map(|(d, w)| d * d * w).sum::<f64>().sqrt();
        assert!(err < 1e-4, "eigenfunction {l}: L2 error {err:e}");
    }
}

#[test]
fn trace_identity_and_orthonormality() {
    let ds = dataset();
    let res = fpca(&ds).unwrap();
    let n = ds.n();
    let mean = &res.mean_coeffs;
    let total: f64 = (0..n).map(|i| l2_norm(&ds.basis, &(ds.row(i) - mean)).powi(2)).sum::<f64>()
        / (n as f64 - 1.0);
    let sum: f64 = res.eigenvalues.sum();
    assert!((sum - total).abs() < 1e-8 * total, "{sum} vs {total}");

    let g = res.harmonics.transpose() * ds.basis.gram() * &res.harmonics;
    assert!((g - DMatrix::identity(ds.p(), ds.p())).amax() < 1e-8);

    // scores are centered with variances equal to the eigenvalues
    for l in 0..5 {
        let col = res.scores.column(l);
        assert!(col.mean().abs() < 1e-10);
        let var = col.norm_squared() / (n as f64 - 1.0);
        assert!((var - res.eigenvalues[l]).abs() < 1e-8 * res.eigenvalues[0]);
    }
    assert!((res.varprop.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn reconstruction_is_exact_at_full_rank_and_improves_with_q() {
    let ds = dataset();
    let res = fpca(&ds).unwrap();
    let p = ds.p();
    for i in 0..ds.n() {
        assert!(res.reconstruction_error(&ds, i, p).unwrap() < 1e-8);
        let mut last = f64::INFINITY;
        for q in 1..=p {
            let e = res.reconstruction_error(&ds, i, q).unwrap();
            assert!(e <= last + 1e-12);
            last = e;
        }
    }
}

#[test]
fn eigenvalues_ignore_curve_order() {
    let ds = dataset();
    let res = fpca(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    for i in (1..idx.len()).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let shuffled = FunctionalDataset::from_coefficients(
        ds.basis.clone(),
        ds.coefficients.select_rows(idx.iter()),
    )
    .unwrap();
    let other = fpca(&shuffled).unwrap();
    let top = res.eigenvalues[0];
    assert!((&res.eigenvalues - &other.eigenvalues).amax() < 1e-10 * top);
    for l in 0..5 {
        // same sign convention, so the same functions
        assert!((res.harmonics.column(l) - other.harmonics.column(l)).amax() < 1e-6);
    }
}

#[test]
fn semimetric_at_full_rank_is_l2_distance() {
    let ds = dataset();
    let res = fpca(&ds).unwrap();
    // Gram matrix from quadrature, not from the library
    let (gram, _) = quadrature_matrix(&ds.basis, 0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let i = rng.random_range(0..ds.n());
        let j = rng.random_range(0..ds.n());
        let d = semimetric_fpca(&res, i, j, ds.p()).unwrap();
        let delta = ds.row(i) - ds.row(j);
        let exact = delta.dot(&(&gram * &delta)).max(0.0).sqrt();
        assert!((d - exact).abs() < 1e-8, "{d} vs {exact}");
        // truncation can only shrink the distance
        assert!(semimetric_fpca(&res, i, j, 2).unwrap() <= d + 1e-12);
    }
}
