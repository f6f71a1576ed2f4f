//! Clamped B-spline bases on an age interval.
//!
//! A basis is defined by its order `m` (4 for cubic) and a non-decreasing
//! list of `L` breakpoints whose first and last entries are the domain
//! bounds. The boundary knots are repeated `m` times, giving `(L - 2) + m`
//! basis functions. The Gram matrix `W[j,k] = ∫ψ_j ψ_k` and the roughness
//! penalty `R[j,k] = ∫ψ''_j ψ''_k` are integrated exactly by Gauss–Legendre
//! quadrature on every knot interval.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FcurveError, Result};
use crate::linalg::gauss_legendre;

/// Age domain of the mortality schedules, in years.
pub const AGE_DOMAIN: (f64, f64) = (0.0, 110.0);

/// How the breakpoints of a basis are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotScheme {
    /// One knot per integer age, 0..=110.
    Uniform111,
    /// Quarterly knots on [0, 2], then every five years from 7 to 107, then 110.
    NonUniform31,
    /// Explicit breakpoints, endpoints included.
    Custom(Vec<f64>),
}

impl KnotScheme {
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            KnotScheme::Uniform111 => (0..=110).map(f64::from).collect(),
            KnotScheme::NonUniform31 => {
                let mut k: Vec<f64> = (0..=8).map(|i| i as f64 * 0.25).collect();
                k.extend((0..21).map(|i| 7.0 + 5.0 * i as f64));
                k.push(110.0);
                k
            }
            KnotScheme::Custom(k) => k.clone(),
        }
    }
}

/// Serializable description sufficient to rebuild a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub order: usize,
    pub knots: Vec<f64>,
}

impl BasisSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("basis spec serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BSplineBasis {
    order: usize,
    breaks: Vec<f64>,
    knots: Vec<f64>,
    gram: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl TryFrom<BasisSpec> for BSplineBasis {
    type Error = FcurveError;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        BSplineBasis::new(spec.knots, spec.order)
    }
}

impl From<BSplineBasis> for BasisSpec {
    fn from(b: BSplineBasis) -> Self {
        b.spec()
    }
}

impl PartialEq for BSplineBasis {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.breaks == other.breaks
    }
}

/// Build a clamped B-spline basis of the given order on the scheme's knots.
pub fn make_basis(scheme: &KnotScheme, order: usize) -> Result<BSplineBasis> {
    BSplineBasis::new(scheme.breakpoints(), order)
}

impl BSplineBasis {
    pub fn new(breaks: Vec<f64>, order: usize) -> Result<Self> {
        if order < 2 {
            return Err(FcurveError::Knots(format!("order {order} < 2")));
        }
        if breaks.len() < 2 {
            return Err(FcurveError::Knots(format!(
                "need at least 2 knots, got {}",
                breaks.len()
            )));
        }
        if breaks.iter().any(|k| !k.is_finite()) {
            return Err(FcurveError::Knots("non-finite knot".into()));
        }
        if let Some(w) = breaks.windows(2).find(|w| w[1] < w[0]) {
            return Err(FcurveError::Knots(format!(
                "decreasing knots {} > {}",
                w[0], w[1]
            )));
        }
        let (lo, hi) = (breaks[0], breaks[breaks.len() - 1]);
        if hi <= lo {
            return Err(FcurveError::Knots("empty domain".into()));
        }
        // interior multiplicity must stay below the order
        let mut run = 1;
        for w in breaks[1..breaks.len() - 1].windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run >= order {
                return Err(FcurveError::Knots(format!(
                    "interior knot {} repeated {} times",
                    w[0], run
                )));
            }
        }
        if breaks.len() > 2 && (breaks[1] == lo || breaks[breaks.len() - 2] == hi) {
            return Err(FcurveError::Knots(
                "interior knot coincides with a boundary".into(),
            ));
        }

        let mut knots = Vec::with_capacity(breaks.len() + 2 * (order - 1));
        knots.extend(std::iter::repeat_n(lo, order - 1));
        knots.extend_from_slice(&breaks);
        knots.extend(std::iter::repeat_n(hi, order - 1));

        let mut basis = BSplineBasis {
            order,
            breaks,
            knots,
            gram: DMatrix::zeros(0, 0),
            penalty: DMatrix::zeros(0, 0),
        };
        basis.gram = basis.integrate_products(0);
        basis.penalty = if order >= 3 {
            basis.integrate_products(2)
        } else {
            let p = basis.dim();
            DMatrix::zeros(p, p)
        };
        Ok(basis)
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        Self::new(spec.knots.clone(), spec.order)
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            order: self.order,
            knots: self.breaks.clone(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `(L - 2) + order`.
    pub fn dim(&self) -> usize {
        self.breaks.len() - 2 + self.order
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breaks[0], self.breaks[self.breaks.len() - 1])
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// `∫ψ_j(t) dt` for every basis function.
    pub fn integrals(&self) -> DVector<f64> {
        let p = self.dim();
        DVector::from_iterator(p, (0..p).map(|j| self.gram.row(j).sum()))
    }

    /// Greville abscissae: the coefficient vector `a + b·ξ` represents the
    /// affine function `a + b·t` exactly.
    pub fn greville(&self) -> Vec<f64> {
        let m = self.order;
        (0..self.dim())
            .map(|j| self.knots[j + 1..j + m].iter().sum::<f64>() / (m - 1) as f64)
            .collect()
    }

    pub fn affine_coefficients(&self, intercept: f64, slope: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.greville().into_iter().map(|x| intercept + slope * x),
        )
    }

    fn span(&self, t: f64) -> usize {
        let m = self.order;
        let last = self.knots.len() - m - 1;
        if t >= self.knots[last + 1] {
            // right endpoint: last span with positive length
            let mut s = last;
            while self.knots[s] == self.knots[s + 1] {
                s -= 1;
            }
            return s;
        }
        // largest s with knots[s] <= t, restricted to [m-1, last]
        let s = self.knots.partition_point(|&k| k <= t) - 1;
        s.clamp(m - 1, last)
    }

    /// Non-zero basis values (or derivatives) at `t`: returns the index of the
    /// first non-zero function and `order` consecutive values.
    pub fn eval_local(&self, t: f64, derivative: usize) -> Result<(usize, Vec<f64>)> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(FcurveError::Domain { t, lo, hi });
        }
        if derivative >= self.order {
            return Err(FcurveError::Parameter(format!(
                "derivative {derivative} exceeds order - 1 = {}",
                self.order - 1
            )));
        }
        let s = self.span(t);
        let ders = self.ders_basis_funs(s, t, derivative);
        Ok((s + 1 - self.order, ders[derivative].clone()))
    }

    /// Dense evaluation: length-`p` vector of `ψ_j^{(derivative)}(t)`.
    pub fn eval(&self, t: f64, derivative: usize) -> Result<DVector<f64>> {
        let (first, vals) = self.eval_local(t, derivative)?;
        let mut out = DVector::zeros(self.dim());
        for (r, v) in vals.into_iter().enumerate() {
            out[first + r] = v;
        }
        Ok(out)
    }

    /// Value of the curve with the given coefficients at `t`.
    pub fn eval_curve(&self, coefs: &[f64], t: f64, derivative: usize) -> Result<f64> {
        if coefs.len() != self.dim() {
            return Err(FcurveError::Dimension {
                expected: self.dim(),
                got: coefs.len(),
            });
        }
        let (first, vals) = self.eval_local(t, derivative)?;
        Ok(vals
            .iter()
            .enumerate()
            .map(|(r, v)| v * coefs[first + r])
            .sum())
    }

    /// `N × p` design matrix of basis values at the given points.
    pub fn design(&self, ts: &[f64]) -> Result<DMatrix<f64>> {
        let mut b = DMatrix::zeros(ts.len(), self.dim());
        for (i, &t) in ts.iter().enumerate() {
            let (first, vals) = self.eval_local(t, 0)?;
            for (r, v) in vals.into_iter().enumerate() {
                b[(i, first + r)] = v;
            }
        }
        Ok(b)
    }

    // Cox–de Boor recursion with derivatives; rows are derivative orders
    // 0..=n, columns the `order` functions non-zero on span `s`.
    fn ders_basis_funs(&self, s: usize, t: f64, n: usize) -> Vec<Vec<f64>> {
        let deg = self.order - 1;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; deg + 1]; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        ndu[0][0] = 1.0;
        for j in 1..=deg {
            left[j] = t - u[s + 1 - j];
            right[j] = u[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; deg + 1]; n + 1];
        for j in 0..=deg {
            ders[0][j] = ndu[j][deg];
        }
        let mut a = vec![vec![0.0; deg + 1]; 2];
        for r in 0..=deg {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = deg - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { deg - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = deg as f64;
        for k in 1..=n {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (deg - k) as f64;
        }
        ders
    }

    fn integrate_products(&self, derivative: usize) -> DMatrix<f64> {
        let p = self.dim();
        let (nodes, weights) = gauss_legendre(self.order + 1);
        let mut out = DMatrix::zeros(p, p);
        for w in self.breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wt) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let (first, vals) = self
                    .eval_local(t, derivative)
                    .expect("quadrature node inside domain");
                for (r, vr) in vals.iter().enumerate() {
                    for (c, vc) in vals.iter().enumerate() {
                        out[(first + r, first + c)] += half * wt * vr * vc;
                    }
                }
            }
        }
        (&out + out.transpose()) * 0.5
    }
}

/// Roughness penalty `R[j,k] = ∫ψ''_j ψ''_k`; needs order ≥ 3.
pub fn penalty_matrix(basis: &BSplineBasis) -> Result<DMatrix<f64>> {
    if basis.order() < 3 {
        return Err(FcurveError::Parameter(format!(
            "roughness penalty needs order >= 3, got {}",
            basis.order()
        )));
    }
    Ok(basis.penalty().clone())
}

pub fn gram_matrix(basis: &BSplineBasis) -> DMatrix<f64> {
    basis.gram().clone()
}
