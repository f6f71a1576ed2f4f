//! Basis matrices and evaluation checked against brute-force quadrature and
//! finite differences.

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fcurve::basis::{make_basis, BSplineBasis, KnotScheme};

mod common;
use common::{quadrature_matrix, rel_frobenius};

#[test]
fn dimension_formula() {
    assert_eq!(make_basis(&KnotScheme::NonUniform31, 4).unwrap().dim(), 33);
    assert_eq!(make_basis(&KnotScheme::Uniform111, 4).unwrap().dim(), 113);
    for order in 2..=5 {
        let b = make_basis(&KnotScheme::NonUniform31, order).unwrap();
        assert_eq!(b.dim(), 31 - 2 + order);
    }
}

#[test]
fn gram_and_penalty_match_simpson_oracle() {
    for scheme in [KnotScheme::NonUniform31, KnotScheme::Uniform111] {
        let b = make_basis(&scheme, 4).unwrap();
        let (w, n) = quadrature_matrix(&b, 0, true);
        let (r, _) = quadrature_matrix(&b, 2, true);
        assert_eq!(n, 10_001);
        assert!(rel_frobenius(b.gram(), &w) < 1e-6, "{scheme:?} gram");
        assert!(rel_frobenius(b.penalty(), &r) < 1e-6, "{scheme:?} penalty");
    }
}

#[test]
fn trapezoid_oracle_converges_towards_exact_matrices() {
    // second-order rule: a looser bound, but the same target
    let b = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    let (w, _) = quadrature_matrix(&b, 0, false);
    let (r, _) = quadrature_matrix(&b, 2, false);
    assert!(rel_frobenius(b.gram(), &w) < 1e-5);
    assert!(rel_frobenius(b.penalty(), &r) < 1e-4);
}

#[test]
fn matrices_are_symmetric_and_gram_is_positive_definite() {
    let b = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    let w = b.gram();
    let r = b.penalty();
    assert!((w - w.transpose()).amax() < 1e-15);
    assert!((r - r.transpose()).amax() < 1e-12 * r.amax());
    assert!(w.clone().cholesky().is_some());
    assert!(r.symmetric_eigenvalues().min() > -1e-9 * r.amax());
    assert_relative_eq!(w.sum(), 110.0, max_relative = 1e-12);
    assert_relative_eq!(b.integrals().sum(), 110.0, max_relative = 1e-12);
}

fn near_knot(b: &BSplineBasis, t: f64, gap: f64) -> bool {
    b.breakpoints().iter().any(|k| (k - t).abs() < gap)
}

#[test]
fn derivatives_match_central_differences() {
    let b = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coefs: Vec<f64> = (0..b.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut checked = 0;
    while checked < 300 {
        let t: f64 = rng.random_range(0.01..109.99);
        if near_knot(&b, t, 2e-3) {
            continue;
        }
        let h = 1e-5;
        let f = |x: f64| b.eval_curve(&coefs, x, 0).unwrap();
        let d1 = b.eval_curve(&coefs, t, 1).unwrap();
        let fd1 = (f(t + h) - f(t - h)) / (2.0 * h);
        assert!((d1 - fd1).abs() < 1e-5 * (1.0 + d1.abs()), "t={t}: {d1} vs {fd1}");
        let g = |x: f64| b.eval_curve(&coefs, x, 1).unwrap();
        let d2 = b.eval_curve(&coefs, t, 2).unwrap();
        let fd2 = (g(t + h) - g(t - h)) / (2.0 * h);
        assert!((d2 - fd2).abs() < 1e-4 * (1.0 + d2.abs()), "t={t}: {d2} vs {fd2}");
        checked += 1;
    }
}

#[test]
fn partition_of_unity_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for scheme in [KnotScheme::NonUniform31, KnotScheme::Uniform111] {
        let b = make_basis(&scheme, 4).unwrap();
        for _ in 0..1000 {
            let t: f64 = rng.random_range(0.0..=110.0);
            let v = b.eval(t, 0).unwrap();
            assert!((v.sum() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|&x| x >= -1e-15));
            assert!(b.eval(t, 1).unwrap().sum().abs() < 1e-9);
        }
    }
    let b = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    for t in [0.0, 110.0] {
        assert!((b.eval(t, 0).unwrap().sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn local_support() {
    let b = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    let knots = b.knots();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let t: f64 = rng.random_range(0.0..110.0);
        let v = b.eval(t, 0).unwrap();
        assert!(v.iter().filter(|&&x| x != 0.0).count() <= 4);
        for (k, &x) in v.iter().enumerate() {
            if t < knots[k] || t > knots[k + 4] {
                assert_eq!(x, 0.0, "B_{k}({t})");
            }
        }
    }
}

#[test]
fn penalty_null_space_is_affine() {
    for scheme in [KnotScheme::NonUniform31, KnotScheme::Uniform111] {
        let b = make_basis(&scheme, 4).unwrap();
        let r = b.penalty();
        for (a, s) in [(1.0, 0.0), (0.0, 1.0), (-2.0, 0.3)] {
            let c = b.affine_coefficients(a, s);
            assert!((r * &c).amax() < 1e-9 * r.amax() * c.amax());
            for t in [0.0, 0.3, 17.0, 64.5, 110.0] {
                let y = b.eval_curve(c.as_slice(), t, 0).unwrap();
                assert!((y - (a + s * t)).abs() < 1e-10 * (1.0 + y.abs()));
            }
        }
        // exactly two zero eigenvalues
        let eig = r.symmetric_eigenvalues();
        let tiny = eig.iter().filter(|&&e| e.abs() < 1e-9 * r.amax()).count();
        assert_eq!(tiny, 2);
    }
}

#[test]
fn invalid_constructions_are_rejected() {
    assert!(BSplineBasis::new(vec![0.0, 50.0, 40.0, 110.0], 4).is_err());
    assert!(BSplineBasis::new(vec![0.0], 4).is_err());
    assert!(BSplineBasis::new(vec![0.0, 110.0], 1).is_err());
    let b = make_basis(&KnotScheme::NonUniform31, 4).unwrap();
    assert!(b.eval(-0.5, 0).is_err());
    assert!(b.eval(110.5, 0).is_err());
    assert!(b.eval(f64::NAN, 0).is_err());
    let linear = make_basis(&KnotScheme::NonUniform31, 2).unwrap();
    assert!(fcurve::basis::penalty_matrix(&linear).is_err());
}
