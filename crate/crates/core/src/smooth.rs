//! Penalized least-squares smoothing onto a B-spline basis, with the
//! smoothing parameter chosen by generalized cross-validation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::error::{FcurveError, Result};
use crate::ingest::{CurveKey, CurvePanel, Sex};
use crate::linalg::sym_eigen_desc;

/// Result of one penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothFit {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    /// Trace of the hat matrix.
    pub df: f64,
    pub sse: f64,
    /// `None` when `df >= N`.
    pub gcv: Option<f64>,
}

/// GCV(λ) = N·SSE / (N − df)².
pub fn gcv_score(fit: &SmoothFit, n_obs: usize) -> Result<f64> {
    gcv_value(fit.sse, fit.df, n_obs)
}

fn gcv_value(sse: f64, df: f64, n_obs: usize) -> Result<f64> {
    let n = n_obs as f64;
    if df >= n {
        return Err(FcurveError::UndefinedGcv { df, n: n_obs });
    }
    Ok(n * sse / ((n - df) * (n - df)))
}

/// 33 log-spaced values on [1e-6, 1e2].
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-6, 1e2, 33)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && n >= 1);
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Precomputed design for smoothing many curves observed at the same points.
#[derive(Debug, Clone)]
pub struct PenalizedSmoother<'a> {
    basis: &'a BSplineBasis,
    ages: Vec<f64>,
    design: DMatrix<f64>,
    /// `E` with `EᵀE = R`.
    penalty_root: DMatrix<f64>,
}

/// QR factorization of the stacked system `[B; √λ·E]` for one λ.
pub struct NormalFactor {
    pub lambda: f64,
    q_top: DMatrix<f64>,
    r: DMatrix<f64>,
    pub df: f64,
}

impl<'a> PenalizedSmoother<'a> {
    pub fn new(basis: &'a BSplineBasis, ages: &[f64]) -> Result<Self> {
        if ages.len() < basis.order() {
            return Err(FcurveError::InsufficientData(format!(
                "{} observation points for a basis of order {}",
                ages.len(),
                basis.order()
            )));
        }
        let design = basis.design(ages)?;
        let (vals, vecs) = sym_eigen_desc(basis.penalty());
        // rounding leaves ~1e-13 relative mass on linear functions; a large λ
        // would amplify it, so clip to the exact null space
        let cut = 1e-9 * vals.max();
        let root = DMatrix::from_diagonal(&vals.map(|v| if v > cut { v.sqrt() } else { 0.0 }))
            * vecs.transpose();
        Ok(PenalizedSmoother {
            basis,
            ages: ages.to_vec(),
            design,
            penalty_root: root,
        })
    }

    pub fn basis(&self) -> &BSplineBasis {
        self.basis
    }

    pub fn n_obs(&self) -> usize {
        self.ages.len()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn factor(&self, lambda: f64) -> Result<NormalFactor> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(FcurveError::Parameter(format!("lambda must be >= 0, got {lambda}")));
        }
        let (n, p) = self.design.shape();
        let mut stacked = DMatrix::zeros(n + p, p);
        stacked.view_mut((0, 0), (n, p)).copy_from(&self.design);
        stacked
            .view_mut((n, 0), (p, p))
            .copy_from(&(&self.penalty_root * lambda.sqrt()));
        let qr = stacked.qr();
        let r = qr.r();
        let q = qr.q();
        let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().any(|&d| !(d > 1e-10 * max)) {
            return Err(FcurveError::Rank { lambda });
        }
        let q_top = q.rows(0, n).into_owned();
        // hat matrix B(BᵀB+λR)⁻¹Bᵀ = Q₁Q₁ᵀ
        let df = q_top.norm_squared();
        Ok(NormalFactor { lambda, q_top, r, df })
    }

    pub fn fit_with(&self, factor: &NormalFactor, y: &[f64]) -> Result<SmoothFit> {
        if y.len() != self.n_obs() {
            return Err(FcurveError::Dimension {
                expected: self.n_obs(),
                got: y.len(),
            });
        }
        let y = DVector::from_column_slice(y);
        let rhs = factor.q_top.tr_mul(&y);
        let coefficients = factor
            .r
            .solve_upper_triangular(&rhs)
            .ok_or(FcurveError::Rank { lambda: factor.lambda })?;
        let resid = &y - &self.design * &coefficients;
        let sse = resid.norm_squared();
        let gcv = gcv_value(sse, factor.df, self.n_obs()).ok();
        Ok(SmoothFit {
            coefficients,
            lambda: factor.lambda,
            df: factor.df,
            sse,
            gcv,
        })
    }

    pub fn fit(&self, y: &[f64], lambda: f64) -> Result<SmoothFit> {
        self.fit_with(&self.factor(lambda)?, y)
    }
}

/// Minimize `Σ(y − Bγ)² + λ γᵀRγ` in closed form.
pub fn fit_penalized(
    y: &[f64],
    ages: &[f64],
    basis: &BSplineBasis,
    lambda: f64,
) -> Result<SmoothFit> {
    if y.len() != ages.len() {
        return Err(FcurveError::Dimension {
            expected: ages.len(),
            got: y.len(),
        });
    }
    PenalizedSmoother::new(basis, ages)?.fit(y, lambda)
}

/// Outcome of a GCV grid search on one curve.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub best: SmoothFit,
    /// Successful fits in grid order.
    pub fits: Vec<SmoothFit>,
}

// smaller GCV wins; exact ties go to the larger λ
fn better(cand: (f64, f64), best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((g, l)) => cand.0 < g || (cand.0 == g && cand.1 > l),
    }
}

pub fn select_lambda(
    y: &[f64],
    ages: &[f64],
    basis: &BSplineBasis,
    grid: &[f64],
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(FcurveError::Parameter("empty lambda grid".into()));
    }
    if y.len() != ages.len() {
        return Err(FcurveError::Dimension {
            expected: ages.len(),
            got: y.len(),
        });
    }
    let smoother = PenalizedSmoother::new(basis, ages)?;
    let fits: Vec<SmoothFit> = grid
        .iter()
        .filter_map(|&l| smoother.fit(y, l).ok())
        .collect();
    let mut best: Option<(f64, f64, usize)> = None;
    for (i, f) in fits.iter().enumerate() {
        if let Some(g) = f.gcv {
            if better((g, f.lambda), best.map(|b| (b.0, b.1))) {
                best = Some((g, f.lambda, i));
            }
        }
    }
    let (_, lambda, idx) = best.ok_or(FcurveError::Selection)?;
    Ok(LambdaSelection {
        lambda,
        best: fits[idx].clone(),
        fits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// One λ for the whole panel, minimizing the summed GCV.
    Common,
    /// Each curve gets its own GCV-selected λ.
    PerCurve,
}

impl std::str::FromStr for LambdaMode {
    type Err = FcurveError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "common" => Ok(LambdaMode::Common),
            "per-curve" | "per_curve" => Ok(LambdaMode::PerCurve),
            other => Err(FcurveError::Config(format!("unknown lambda mode '{other}'"))),
        }
    }
}

/// `n` smoothed curves sharing one basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub basis: BSplineBasis,
    /// `n × p`, one row per curve.
    pub coefficients: DMatrix<f64>,
    pub keys: Vec<CurveKey>,
    pub lambdas: Vec<f64>,
    /// Observation points the curves were smoothed from.
    pub grid: Vec<f64>,
}

impl FunctionalDataset {
    pub fn new(
        basis: BSplineBasis,
        coefficients: DMatrix<f64>,
        keys: Vec<CurveKey>,
        lambdas: Vec<f64>,
        grid: Vec<f64>,
    ) -> Result<Self> {
        let n = coefficients.nrows();
        if n == 0 {
            return Err(FcurveError::InsufficientData("empty dataset".into()));
        }
        if coefficients.ncols() != basis.dim() {
            return Err(FcurveError::Dimension {
                expected: basis.dim(),
                got: coefficients.ncols(),
            });
        }
        for len in [keys.len(), lambdas.len()] {
            if len != n {
                return Err(FcurveError::Dimension { expected: n, got: len });
            }
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(FcurveError::Numeric("non-finite coefficient".into()));
        }
        let mut sorted = keys.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(FcurveError::DuplicateKey(w[0].to_string()));
        }
        Ok(FunctionalDataset {
            basis,
            coefficients,
            keys,
            lambdas,
            grid,
        })
    }

    /// Dataset built directly from coefficient rows, with synthetic keys
    /// `SYN/<index>/male`.
    pub fn from_coefficients(basis: BSplineBasis, coefficients: DMatrix<f64>) -> Result<Self> {
        let n = coefficients.nrows();
        let keys = (0..n)
            .map(|i| CurveKey {
                country: "SYN".into(),
                year: i as i32,
                sex: Sex::Male,
            })
            .collect();
        let (lo, hi) = basis.domain();
        let grid = (0..=110).map(|i| lo + (hi - lo) * i as f64 / 110.0).collect();
        FunctionalDataset::new(basis, coefficients, keys, vec![0.0; n], grid)
    }

    pub fn n(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn p(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.coefficients.row(i).transpose()
    }

    /// Keep the rows selected by `keep`, in order.
    pub fn select(&self, keep: impl Fn(&CurveKey) -> bool) -> Result<FunctionalDataset> {
        let idx: Vec<usize> = (0..self.n()).filter(|&i| keep(&self.keys[i])).collect();
        let coefficients = self.coefficients.select_rows(idx.iter());
        FunctionalDataset::new(
            self.basis.clone(),
            coefficients,
            idx.iter().map(|&i| self.keys[i].clone()).collect(),
            idx.iter().map(|&i| self.lambdas[i]).collect(),
            self.grid.clone(),
        )
    }

    pub fn for_sex(&self, sex: Sex) -> Result<FunctionalDataset> {
        self.select(|k| k.sex == sex)
    }

    /// L₂ distance between two curves, `‖x_i − x_j‖`.
    pub fn l2_distance(&self, i: usize, j: usize) -> f64 {
        let d = self.row(i) - self.row(j);
        (d.transpose() * self.basis.gram() * &d)[(0, 0)].max(0.0).sqrt()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| FcurveError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FcurveError::io(path, e))?;
        let ds: FunctionalDataset = serde_json::from_str(&text)?;
        FunctionalDataset::new(ds.basis, ds.coefficients, ds.keys, ds.lambdas, ds.grid)
    }
}

/// Summed GCV over a panel for each λ of the grid; `None` where any curve
/// failed.
pub fn common_gcv_profile(
    ys: &[Vec<f64>],
    smoother: &PenalizedSmoother<'_>,
    grid: &[f64],
) -> Vec<Option<f64>> {
    grid.par_iter()
        .map(|&l| {
            let factor = smoother.factor(l).ok()?;
            let mut total = 0.0;
            for y in ys {
                total += smoother.fit_with(&factor, y).ok()?.gcv?;
            }
            Some(total)
        })
        .collect()
}

/// Smooth every curve of the panel onto `basis`, observed at ages 0..=110.
pub fn smooth_panel(
    panel: &CurvePanel,
    basis: &BSplineBasis,
    mode: LambdaMode,
    grid: &[f64],
) -> Result<FunctionalDataset> {
    if panel.is_empty() {
        return Err(FcurveError::InsufficientData("empty panel".into()));
    }
    if grid.is_empty() {
        return Err(FcurveError::Parameter("empty lambda grid".into()));
    }
    let ages: Vec<f64> = (0..crate::ingest::N_AGES).map(|a| a as f64).collect();
    let smoother = PenalizedSmoother::new(basis, &ages)?;
    let ys: Vec<Vec<f64>> = panel.curves().iter().map(|c| c.values.clone()).collect();
    let p = basis.dim();
    let n = ys.len();

    let fits: Vec<SmoothFit> = match mode {
        LambdaMode::Common => {
            let profile = common_gcv_profile(&ys, &smoother, grid);
            let mut best: Option<(f64, f64)> = None;
            for (&l, g) in grid.iter().zip(&profile) {
                if let Some(g) = *g {
                    if better((g, l), best) {
                        best = Some((g, l));
                    }
                }
            }
            let (_, lambda) = best.ok_or(FcurveError::Selection)?;
            let factor = smoother.factor(lambda)?;
            ys.par_iter()
                .map(|y| smoother.fit_with(&factor, y))
                .collect::<Result<_>>()?
        }
        LambdaMode::PerCurve => {
            let factors: Vec<NormalFactor> =
                grid.iter().filter_map(|&l| smoother.factor(l).ok()).collect();
            if factors.is_empty() {
                return Err(FcurveError::Selection);
            }
            ys.par_iter()
                .map(|y| {
                    let mut best: Option<SmoothFit> = None;
                    for f in &factors {
                        let fit = smoother.fit_with(f, y)?;
                        if let Some(g) = fit.gcv {
                            let cur = best.as_ref().map(|b| (b.gcv.unwrap(), b.lambda));
                            if better((g, fit.lambda), cur) {
                                best = Some(fit);
                            }
                        }
                    }
                    best.ok_or(FcurveError::Selection)
                })
                .collect::<Result<_>>()?
        }
    };

    let mut coefficients = DMatrix::zeros(n, p);
    for (i, f) in fits.iter().enumerate() {
        coefficients.set_row(i, &f.coefficients.transpose());
    }
    FunctionalDataset::new(
        basis.clone(),
        coefficients,
        panel.keys(),
        fits.iter().map(|f| f.lambda).collect(),
        ages,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, KnotScheme};

    fn basis() -> BSplineBasis {
        make_basis(&KnotScheme::NonUniform31, 4).unwrap()
    }

    fn ages() -> Vec<f64> {
        (0..=110).map(f64::from).collect()
    }

    #[test]
    fn gcv_arithmetic() {
        let fit = SmoothFit {
            coefficients: DVector::zeros(1),
            lambda: 1.0,
            df: 11.0,
            sse: 1.0,
            gcv: None,
        };
        assert!((gcv_score(&fit, 111).unwrap() - 0.0111).abs() < 1e-15);
        let zero = SmoothFit { sse: 0.0, ..fit.clone() };
        assert_eq!(gcv_score(&zero, 111).unwrap(), 0.0);
        let over = SmoothFit { df: 111.0, ..fit };
        assert!(matches!(
            gcv_score(&over, 111),
            Err(FcurveError::UndefinedGcv { .. })
        ));
    }

    #[test]
    fn default_grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 33);
        assert!((g[0] - 1e-6).abs() < 1e-20);
        assert!((g[32] - 1e2).abs() < 1e-10);
        assert!((g[4] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn exact_representation_at_zero_lambda() {
        // cubic basis with knots at every fifth year: N=111 points pin it down
        let b = make_basis(
            &KnotScheme::Custom((0..=22).map(|i| 5.0 * i as f64).collect()),
            4,
        )
        .unwrap();
        let truth: Vec<f64> = (0..b.dim()).map(|j| ((j as f64) * 0.7).sin()).collect();
        let y: Vec<f64> = ages()
            .iter()
            .map(|&t| b.eval_curve(&truth, t, 0).unwrap())
            .collect();
        let fit = fit_penalized(&y, &ages(), &b, 0.0).unwrap();
        assert!(fit.sse < 1e-18, "sse {}", fit.sse);
        for (g, t) in fit.coefficients.iter().zip(&truth) {
            assert!((g - t).abs() < 1e-8);
        }
    }

    #[test]
    fn deficient_design_at_zero_lambda_is_rank_error() {
        // the quarterly knots on [0,2] leave basis functions without data
        let y = vec![0.01; 111];
        assert!(matches!(
            fit_penalized(&y, &ages(), &basis(), 0.0),
            Err(FcurveError::Rank { .. })
        ));
        assert!(fit_penalized(&y, &ages(), &basis(), 1e-3).is_ok());
    }

    #[test]
    fn huge_lambda_tends_to_regression_line() {
        let b = basis();
        let t = ages();
        let y: Vec<f64> = t.iter().map(|&x| (x / 20.0).sin() + 0.01 * x).collect();
        let fit = fit_penalized(&y, &t, &b, 1e12).unwrap();
        // ordinary least-squares line
        let n = t.len() as f64;
        let mt = t.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = t.iter().zip(&y).map(|(a, b)| (a - mt) * (b - my)).sum();
        let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mt;
        for &x in &t {
            let v = b.eval_curve(fit.coefficients.as_slice(), x, 0).unwrap();
            assert!((v - (icpt + slope * x)).abs() < 1e-4, "at {x}: {v}");
        }
        assert!((fit.df - 2.0).abs() < 1e-3);
    }

    #[test]
    fn single_grid_value_is_returned() {
        let y: Vec<f64> = ages().iter().map(|&x| (x / 30.0).cos()).collect();
        let sel = select_lambda(&y, &ages(), &basis(), &[0.5]).unwrap();
        assert_eq!(sel.lambda, 0.5);
        assert_eq!(sel.fits.len(), 1);
    }

    #[test]
    fn empty_grid_rejected() {
        let y = vec![0.0; 111];
        assert!(select_lambda(&y, &ages(), &basis(), &[]).is_err());
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        assert!(better((1.0, 2.0), Some((1.0, 1.0))));
        assert!(!better((1.0, 0.5), Some((1.0, 1.0))));
        assert!(better((0.5, 0.1), Some((1.0, 1.0))));
    }

    #[test]
    fn residuals_orthogonal_at_zero_lambda() {
        let b = make_basis(&KnotScheme::Custom(vec![0.0, 30.0, 60.0, 110.0]), 4).unwrap();
        let t = ages();
        let y: Vec<f64> = t.iter().map(|&x| (x / 7.0).sin()).collect();
        let s = PenalizedSmoother::new(&b, &t).unwrap();
        let fit = s.fit(&y, 0.0).unwrap();
        let resid = DVector::from_vec(y) - s.design() * &fit.coefficients;
        assert!(s.design().tr_mul(&resid).amax() < 1e-8);
    }
}
