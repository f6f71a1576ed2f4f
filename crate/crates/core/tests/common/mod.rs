//! Reference computations shared by the oracle suites. Each one works from
//! point evaluations of the basis only, never from the library's own
//! matrices or solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use fcurve::basis::BSplineBasis;

/// 10 001 quadrature nodes: every knot span is cut into an even number of
/// equal panels, so no panel straddles a knot.
pub fn knot_aligned_nodes(b: &BSplineBasis, intervals: usize) -> Vec<Vec<f64>> {
    let breaks = b.breakpoints();
    let spans = breaks.len() - 1;
    let base = (intervals / spans) & !1;
    let mut extra = (intervals - base * spans) / 2;
    breaks
        .windows(2)
        .map(|w| {
            let mut m = base;
            if extra > 0 {
                m += 2;
                extra -= 1;
            }
            (0..=m).map(|i| w[0] + (w[1] - w[0]) * i as f64 / m as f64).collect()
        })
        .collect()
}

pub fn quadrature_matrix(b: &BSplineBasis, derivative: usize, simpson: bool) -> (DMatrix<f64>, usize) {
    let p = b.dim();
    let mut out = DMatrix::zeros(p, p);
    let mut count = 1;
    for span in knot_aligned_nodes(b, 10_000) {
        let m = span.len() - 1;
        count += m;
        let h = span[1] - span[0];
        for (i, &t) in span.iter().enumerate() {
            let w = if simpson {
                let c = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                c * h / 3.0
            } else if i == 0 || i == m {
                0.5 * h
            } else {
                h
            };
            // one-sided limit at the right end of each span
            let v = if i == m && derivative > 0 {
                b.eval(t - 1e-12 * (span[m] - span[0]), derivative).unwrap()
            } else {
                b.eval(t, derivative).unwrap()
            };
            out += &v * v.transpose() * w;
        }
    }
    (out, count)
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

// Dense design built one basis function at a time from eval().
pub fn design(b: &BSplineBasis, ts: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(ts.len(), b.dim());
    for (i, &t) in ts.iter().enumerate() {
        m.set_row(i, &b.eval(t, 0).unwrap().transpose());
    }
    m
}

/// Gradient of PSSE(γ) = ‖y − Bγ‖² + λγᵀRγ, up to the factor 2.
pub fn grad(b: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>, g: &DVector<f64>, lambda: f64) -> DVector<f64> {
    b.tr_mul(&(b * g - y)) + r * g * lambda
}

/// Conjugate gradients on the quadratic objective, restarted until the
/// gradient stops shrinking.
pub fn minimize_psse(b: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let p = b.ncols();
    let apply = |v: &DVector<f64>| b.tr_mul(&(b * v)) + r * v * lambda;
    let mut x = DVector::zeros(p);
    for _ in 0..20 {
        let mut res = -grad(b, r, y, &x, lambda);
        let mut dir = res.clone();
        let start = res.norm();
        if start == 0.0 {
            break;
        }
        for _ in 0..4 * p {
            let ad = apply(&dir);
            let curv = dir.dot(&ad);
            if curv <= 0.0 {
                break;
            }
            let alpha = res.norm_squared() / curv;
            x.axpy(alpha, &dir, 1.0);
            let next = &res - &ad * alpha;
            let beta = next.norm_squared() / res.norm_squared();
            res = next;
            if res.norm() < 1e-16 * (1.0 + y.norm()) {
                break;
            }
            dir = &res + &dir * beta;
        }
        if grad(b, r, y, &x, lambda).norm() >= 0.5 * start {
            break;
        }
    }
    x
}

// df = tr(B(BᵀB + λR)⁻¹Bᵀ) via Cholesky of the normal matrix.
pub fn oracle_gcv(b: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
    let a = b.tr_mul(b) + r * lambda;
    let chol = a.cholesky().expect("normal matrix is SPD for λ > 0");
    let gamma = chol.solve(&b.tr_mul(y));
    let df = (b * chol.solve(&b.transpose())).trace();
    let sse = (y - b * gamma).norm_squared();
    let n = b.nrows() as f64;
    n * sse / ((n - df) * (n - df))
}

pub fn simpson(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n % 2 == 1);
    let h = (hi - lo) / (n - 1) as f64;
    let t = (0..n).map(|j| lo + j as f64 * h).collect();
    let w = (0..n)
        .map(|j| {
            let c = if j == 0 || j == n - 1 { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            c * h / 3.0
        })
        .collect();
    (t, w)
}

pub struct DensePca {
    pub values: Vec<f64>,
    /// Column `l` holds eigenfunction `l` on the grid.
    pub functions: DMatrix<f64>,
}

/// PCA of sampled curves with quadrature weights, through the n × n
/// weighted inner-product matrix of the centered samples.
pub fn dense_pca(x: &DMatrix<f64>, w: &[f64]) -> DensePca {
    let (n, m) = x.shape();
    let mean = DVector::from_fn(m, |j, _| x.column(j).mean());
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let wd = DVector::from_column_slice(w);
    let xw = DMatrix::from_fn(n, m, |i, j| xc[(i, j)] * wd[j]);
    let k = &xw * xc.transpose() / (n as f64 - 1.0);
    let eig = k.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut functions = DMatrix::zeros(m, n);
    for (l, &i) in order.iter().enumerate() {
        if values[l] <= 0.0 {
            continue;
        }
        let f = xc.tr_mul(&eig.eigenvectors.column(i)) / ((n as f64 - 1.0) * values[l]).sqrt();
        functions.set_column(l, &f);
    }
    DensePca { values, functions }
}

