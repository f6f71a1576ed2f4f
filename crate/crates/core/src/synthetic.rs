//! Synthetic data generators used by the examples and test suites.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::BSplineBasis;
use crate::error::Result;
use crate::ingest::{CurvePanel, MortalityCurve, Sex, N_AGES};
use crate::linalg::spd_roots;
use crate::smooth::FunctionalDataset;

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn orthonormal(rng: &mut ChaCha8Rng, p: usize, d: usize) -> DMatrix<f64> {
    normal_matrix(rng, p, d).qr().q().columns(0, d).into_owned()
}

/// One group of the subspace mixture.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub size: usize,
    /// Signal variances `a_k1 ≥ … ≥ a_kd`.
    pub a: Vec<f64>,
}

/// Sample curves from the subspace Gaussian mixture in L₂ geometry.
///
/// Group means are `separation` times orthonormal random directions (so
/// pairwise mean distances are `separation·√2`); subspaces are random;
/// noise variance `b` fills the orthogonal complement. Returns the dataset
/// and the generating labels.
pub fn flm_dataset(
    basis: &BSplineBasis,
    groups: &[GroupSpec],
    b: f64,
    separation: f64,
    seed: u64,
) -> Result<(FunctionalDataset, Vec<usize>)> {
    let p = basis.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roots = spd_roots(basis.gram())?;
    let directions = orthonormal(&mut rng, p, groups.len());
    let n: usize = groups.iter().map(|g| g.size).sum();
    let mut z = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (k, g) in groups.iter().enumerate() {
        let mean = directions.column(k) * separation;
        let q = orthonormal(&mut rng, p, g.a.len());
        let proj = DMatrix::identity(p, p) - &q * q.transpose();
        for _ in 0..g.size {
            let u = DVector::from_iterator(
                g.a.len(),
                g.a.iter().map(|a| a.sqrt() * gauss(&mut rng)),
            );
            let v = DVector::from_fn(p, |_, _| gauss(&mut rng)) * b.sqrt();
            let x = &mean + &q * u + &proj * v;
            z.set_row(row, &x.transpose());
            labels.push(k);
            row += 1;
        }
    }
    let coefs = &z * &roots.inv_sqrt;
    Ok((FunctionalDataset::from_coefficients(basis.clone(), coefs)?, labels))
}

/// Gaussian bump on the age axis.
fn bump(age: f64, mode: f64, sd: f64) -> f64 {
    let u = (age - mode) / sd;
    (-0.5 * u * u).exp()
}

/// Shape parameters of a stylized age-at-death distribution.
#[derive(Debug, Clone, Copy)]
pub struct DeathShape {
    pub infant: f64,
    pub premature: f64,
    pub modal_age: f64,
    pub spread: f64,
}

impl DeathShape {
    /// Un-normalized d_x over ages 0..=110.
    pub fn dx(&self) -> Vec<f64> {
        (0..N_AGES)
            .map(|x| {
                let age = x as f64;
                self.infant * (-age / 0.7).exp()
                    + self.premature * bump(age, 45.0, 14.0)
                    + bump(age, self.modal_age, self.spread)
                    + 1e-6
            })
            .collect()
    }
}

/// Raw noisy curves on the 111-age grid drawn around three well-separated
/// templates; returns observations and labels.
pub fn three_template_curves(n_per_cluster: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let templates = [
        DeathShape { infant: 1.2, premature: 0.20, modal_age: 66.0, spread: 11.0 },
        DeathShape { infant: 0.4, premature: 0.10, modal_age: 76.0, spread: 9.0 },
        DeathShape { infant: 0.05, premature: 0.02, modal_age: 86.0, spread: 7.0 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curves = Vec::new();
    let mut labels = Vec::new();
    for (k, t) in templates.iter().enumerate() {
        for _ in 0..n_per_cluster {
            let jitter: f64 = rng.random_range(-1.0..1.0);
            let shape = DeathShape {
                modal_age: t.modal_age + jitter,
                infant: t.infant * (1.0 + 0.1 * rng.random_range(-1.0..1.0)),
                ..*t
            };
            let dx = shape.dx();
            let total: f64 = dx.iter().sum();
            curves.push(
                dx.iter()
                    .map(|v| v / total + noise * gauss(&mut rng))
                    .collect(),
            );
            labels.push(k);
        }
    }
    (curves, labels)
}

/// Panel of stylized mortality curves whose mode shifts upward and whose
/// spread compresses over the years, with country-specific timing.
pub fn mortality_panel(countries: &[&str], years: (i32, i32), sex: Sex, seed: u64) -> Result<CurvePanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curves = Vec::new();
    for (ci, c) in countries.iter().enumerate() {
        let lag = rng.random_range(0.0..20.0);
        let premature = if ci % 4 == 3 { 0.35 } else { 0.08 };
        for year in years.0..=years.1 {
            let t = (year as f64 - years.0 as f64 - lag).max(0.0);
            let shape = DeathShape {
                infant: 1.5 * (-t / 15.0).exp() + 0.02,
                premature: premature * (1.0 + 0.3 * (t / 10.0).sin()),
                modal_age: 70.0 + 0.3 * t + if sex == Sex::Female { 5.0 } else { 0.0 },
                spread: 12.0 - 0.08 * t,
            };
            let dx: Vec<f64> = shape
                .dx()
                .into_iter()
                .map(|v| v * (1.0 + 0.03 * gauss(&mut rng)).max(0.01))
                .collect();
            let total: f64 = dx.iter().sum();
            let dx: Vec<f64> = dx.iter().map(|v| (v / total * 100_000.0).round()).collect();
            curves.push(MortalityCurve::from_dx(c, year, sex, &dx)?);
        }
    }
    CurvePanel::new(curves)
}

/// Render one country's curves as a 1x1 period life table. Only the `dx`
/// column carries information; the others are placeholders.
pub fn hmd_table_text(country: &str, sex: Sex, curves: &[&MortalityCurve]) -> String {
    let mut s = format!(
        "{country}, Life tables (period 1x1), {}\tLast modified: synthetic\n\n",
        if sex == Sex::Male { "Males" } else { "Females" }
    );
    s.push_str("  Year          Age         mx       qx    ax      lx      dx      Lx       Tx     ex\n");
    for c in curves {
        for (age, v) in c.values.iter().enumerate() {
            let label = if age == N_AGES - 1 { "110+".to_string() } else { age.to_string() };
            s.push_str(&format!(
                "  {}  {:>6}  0.00000  0.00000  0.50  100000  {:.0}  0  0  0.00\n",
                c.year,
                label,
                v * c.radix
            ));
        }
    }
    s
}
