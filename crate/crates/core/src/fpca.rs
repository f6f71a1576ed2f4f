//! Functional principal component analysis in coefficient space.
//!
//! With Gram matrix `W` and centered coefficients `Γ̃`, the covariance
//! operator is represented by `(1/(n−1)) W^{1/2} Γ̃ᵀ Γ̃ W^{1/2}`. Its
//! eigenvectors `u_l` map back to eigenfunction coefficients
//! `φ_l = W^{−1/2} u_l`, which are orthonormal in L₂, and the score of curve
//! `i` on component `l` is `Γ̃_i W φ_l = ∫(x_i − x̄) φ_l`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::error::{FcurveError, Result};
use crate::linalg::{spd_roots, sym_eigen_desc};
use crate::smooth::FunctionalDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaResult {
    pub basis: BSplineBasis,
    pub mean_coeffs: DVector<f64>,
    /// Non-increasing, clipped at zero.
    pub eigenvalues: DVector<f64>,
    /// `p × p`; column `l` holds the coefficients of eigenfunction `l`.
    pub harmonics: DMatrix<f64>,
    /// `n × p` score matrix.
    pub scores: DMatrix<f64>,
    pub varprop: DVector<f64>,
}

/// L₂ norm of the curve with coefficients `v`.
pub fn l2_norm(basis: &BSplineBasis, v: &DVector<f64>) -> f64 {
    (v.transpose() * basis.gram() * v)[(0, 0)].max(0.0).sqrt()
}

pub fn fpca(dataset: &FunctionalDataset) -> Result<FpcaResult> {
    let n = dataset.n();
    if n < 2 {
        return Err(FcurveError::InsufficientData(format!(
            "FPCA needs at least 2 curves, got {n}"
        )));
    }
    let basis = &dataset.basis;
    let p = dataset.p();
    let gram = basis.gram();
    let roots = spd_roots(gram)?;

    let mean = DVector::from_iterator(p, dataset.coefficients.column_iter().map(|c| c.mean()));
    let mut centered = dataset.coefficients.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let op = &roots.sqrt * cov * &roots.sqrt;
    let (vals, vecs) = sym_eigen_desc(&op);
    let eigenvalues = vals.map(|v| v.max(0.0));
    let mut harmonics = &roots.inv_sqrt * vecs;

    // orient each eigenfunction so it integrates positively
    let integrals = basis.integrals();
    let design = basis.design(&dataset.grid)?;
    for l in 0..p {
        let mut col = harmonics.column_mut(l);
        let area = integrals.dot(&col);
        let flip = if area.abs() > 1e-12 {
            area < 0.0
        } else {
            let values = &design * &col;
            let peak = values
                .iter()
                .cloned()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            peak < 0.0
        };
        if flip {
            col.neg_mut();
        }
    }

    let scores = &centered * gram * &harmonics;
    let total: f64 = eigenvalues.sum();
    let varprop = if total > 0.0 {
        &eigenvalues / total
    } else {
        DVector::zeros(p)
    };
    Ok(FpcaResult {
        basis: basis.clone(),
        mean_coeffs: mean,
        eigenvalues,
        harmonics,
        scores,
        varprop,
    })
}

impl FpcaResult {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// First `q` score columns.
    pub fn scores(&self, q: usize) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        if q == 0 {
            return Err(FcurveError::Parameter("q must be at least 1".into()));
        }
        Ok(self.scores.columns(0, q).into_owned())
    }

    /// Scores of an arbitrary curve on the first `q` components.
    pub fn project(&self, coeffs: &DVector<f64>, q: usize) -> Result<DVector<f64>> {
        self.check_q(q)?;
        self.check_len(coeffs.len())?;
        let centered = coeffs - &self.mean_coeffs;
        let w = self.basis.gram() * centered;
        Ok(DVector::from_iterator(
            q,
            (0..q).map(|l| self.harmonics.column(l).dot(&w)),
        ))
    }

    /// Karhunen–Loève truncation: mean plus the first `q` score-weighted
    /// eigenfunctions.
    pub fn reconstruct(&self, score_row: &[f64], q: usize) -> Result<DVector<f64>> {
        self.check_q(q)?;
        if score_row.len() < q {
            return Err(FcurveError::Dimension {
                expected: q,
                got: score_row.len(),
            });
        }
        let mut out = self.mean_coeffs.clone();
        for (l, &c) in score_row.iter().take(q).enumerate() {
            out.axpy(c, &self.harmonics.column(l), 1.0);
        }
        Ok(out)
    }

    /// `mean ± multiple·√λ_l·φ_l` for component `l` (zero-based).
    pub fn harmonic_effect(&self, l: usize, multiple: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        if l >= self.n_components() {
            return Err(FcurveError::Parameter(format!(
                "component {l} out of range 0..{}",
                self.n_components()
            )));
        }
        let step = self.harmonics.column(l) * (multiple * self.eigenvalues[l].sqrt());
        Ok((&self.mean_coeffs + &step, &self.mean_coeffs - &step))
    }

    /// L₂ error of reconstructing training curve `i` from `q` components.
    pub fn reconstruction_error(&self, dataset: &FunctionalDataset, i: usize, q: usize) -> Result<f64> {
        let row: Vec<f64> = self.scores.row(i).iter().cloned().collect();
        let rec = self.reconstruct(&row, q)?;
        let x = dataset.row(i);
        Ok(l2_norm(&self.basis, &(rec - &x)))
    }

    /// Cumulative explained-variance shares.
    pub fn cumulative_varprop(&self) -> Vec<f64> {
        self.varprop
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    fn check_q(&self, q: usize) -> Result<()> {
        if q > self.n_components() {
            return Err(FcurveError::Parameter(format!(
                "q = {q} exceeds {} components",
                self.n_components()
            )));
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.mean_coeffs.len() {
            return Err(FcurveError::Dimension {
                expected: self.mean_coeffs.len(),
                got: len,
            });
        }
        Ok(())
    }
}
