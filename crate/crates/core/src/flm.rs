//! Model-based functional clustering with group-specific subspaces.
//!
//! Curves are represented by `z = W^{1/2} γ`, so Euclidean geometry on `z`
//! is L₂ geometry on curves. Group `k` is Gaussian with mean `μ_k` and
//! covariance `Q_k diag(a_k1..a_kd) Q_kᵀ + b_k (I − Q_k Q_kᵀ)`: `d_k`
//! signal directions with their own variances, and isotropic noise `b_k`
//! elsewhere. In the `AkjBQkDk` variant the noise level is shared by all
//! groups.
//!
//! EM alternates posterior computation and parameter updates. The M-step
//! picks each `d_k` with the Cattell scree rule; a change of dimension is
//! accepted only if it does not lower the expected complete-data
//! log-likelihood, otherwise the previous dimensions are kept, so the
//! observed log-likelihood never decreases.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans_with, KMeansConfig, Partition};
use crate::error::{FcurveError, Result};
use crate::linalg::{log_sum_exp, spd_roots, sym_eigen_desc};
use crate::smooth::FunctionalDataset;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const B_FLOOR: f64 = 1e-10;
const A_MARGIN: f64 = 1e-12;
const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlmVariant {
    /// Group-specific noise `b_k`.
    #[serde(rename = "akj-bk-qk-dk")]
    AkjBkQkDk,
    /// Common noise `b`.
    #[serde(rename = "akj-b-qk-dk")]
    AkjBQkDk,
}

impl FlmVariant {
    pub fn common_noise(self) -> bool {
        matches!(self, FlmVariant::AkjBQkDk)
    }

    pub fn name(self) -> &'static str {
        match self {
            FlmVariant::AkjBkQkDk => "akj-bk-qk-dk",
            FlmVariant::AkjBQkDk => "akj-b-qk-dk",
        }
    }
}

impl std::str::FromStr for FlmVariant {
    type Err = FcurveError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "akj-bk-qk-dk" | "akjbkqkdk" => Ok(FlmVariant::AkjBkQkDk),
            "akj-b-qk-dk" | "akjbqkdk" => Ok(FlmVariant::AkjBQkDk),
            other => Err(FcurveError::Config(format!("unknown FLM variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    KMeans,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlmConfig {
    pub k: usize,
    pub variant: FlmVariant,
    pub scree_threshold: f64,
    pub max_iter: usize,
    /// Convergence on the absolute log-likelihood change.
    pub tol: f64,
    pub seed: u64,
    pub init: InitMethod,
}

impl Default for FlmConfig {
    fn default() -> Self {
        FlmConfig {
            k: 2,
            variant: FlmVariant::AkjBQkDk,
            scree_threshold: 0.2,
            max_iter: 200,
            tol: 1e-6,
            seed: 0,
            init: InitMethod::KMeans,
        }
    }
}

impl FlmConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(FcurveError::Parameter("K must be at least 1".into()));
        }
        if !(self.scree_threshold > 0.0 && self.scree_threshold < 1.0) {
            return Err(FcurveError::Parameter(format!(
                "scree threshold {} not in (0, 1)",
                self.scree_threshold
            )));
        }
        if !(self.tol > 0.0) {
            return Err(FcurveError::Parameter("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted mixture. Means and subspaces live in the working space
/// `z = W^{1/2} γ`; use [`FlmModel::mean_coefficients`] and
/// [`FlmModel::subspace_function`] for curve-space quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlmModel {
    pub variant: FlmVariant,
    pub priors: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    /// `p × d_k`, orthonormal columns.
    pub subspaces: Vec<DMatrix<f64>>,
    pub dims: Vec<usize>,
    pub a: Vec<Vec<f64>>,
    /// Noise per group; all entries equal for the common-noise variant.
    pub b: Vec<f64>,
    /// Trace of each group's weighted covariance.
    pub group_traces: Vec<f64>,
    /// `n × K`, rows sum to one.
    pub posteriors: DMatrix<f64>,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// `W^{−1/2}`, maps working-space vectors back to coefficients.
    pub inv_sqrt_gram: DMatrix<f64>,
}

/// Log-likelihood, parameter count and BIC of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub k: usize,
    pub variant: FlmVariant,
    pub seed: u64,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
}

/// Intrinsic dimension by the scree test: the largest `j` whose drop
/// `λ_j − λ_{j+1}` is at least `threshold` times the largest drop. At least 1.
pub fn cattell_scree(eigenvalues: &[f64], threshold: f64) -> usize {
    if eigenvalues.len() < 2 {
        return 1;
    }
    let drops: Vec<f64> = eigenvalues.windows(2).map(|w| w[0] - w[1]).collect();
    let max = drops.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return 1;
    }
    drops
        .iter()
        .rposition(|&d| d >= threshold * max)
        .map_or(1, |j| j + 1)
}

/// Free parameters: proportions, means, subspace orientations, subspace
/// variances and noise terms.
pub fn n_params(k: usize, p: usize, dims: &[usize], variant: FlmVariant) -> usize {
    assert_eq!(dims.len(), k, "one dimension per group");
    let orient: usize = dims.iter().map(|&d| d * p - d * (d + 1) / 2).sum();
    let variances: usize = dims.iter().sum();
    let noise = if variant.common_noise() { 1 } else { k };
    (k - 1) + k * p + orient + variances + noise
}

/// `loglik − (ν/2)·ln n`; larger is better.
pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    loglik - 0.5 * n_params as f64 * (n as f64).ln()
}

struct GroupStats {
    weight: f64,
    mean: DVector<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    trace: f64,
}

struct Params {
    priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    subspaces: Vec<DMatrix<f64>>,
    dims: Vec<usize>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    traces: Vec<f64>,
}

struct EStep {
    posteriors: DMatrix<f64>,
    loglik: f64,
    /// Expected complete-data log-likelihood at the parameters just used.
    q_value: f64,
}

fn group_stats(z: &DMatrix<f64>, post: &DMatrix<f64>, iteration: usize) -> Result<Vec<GroupStats>> {
    let (n, p) = z.shape();
    let k = post.ncols();
    (0..k)
        .map(|g| {
            let w = post.column(g);
            let weight: f64 = w.sum();
            let prior = weight / n as f64;
            if !(prior >= 1.0 / (10.0 * n as f64)) {
                return Err(FcurveError::DegenerateComponent {
                    component: g,
                    iteration,
                    prior,
                });
            }
            let mean = z.tr_mul(&w) / weight;
            let mut cov = DMatrix::zeros(p, p);
            for i in 0..n {
                if w[i] == 0.0 {
                    continue;
                }
                let d = z.row(i).transpose() - &mean;
                cov.ger(w[i], &d, &d, 1.0);
            }
            cov /= weight;
            let trace = cov.trace();
            let (vals, vecs) = sym_eigen_desc(&cov);
            Ok(GroupStats {
                weight,
                mean,
                eigenvalues: vals.iter().map(|v| v.max(0.0)).collect(),
                eigenvectors: vecs,
                trace,
            })
        })
        .collect()
}

fn params_for_dims(stats: &[GroupStats], dims: &[usize], variant: FlmVariant, n: usize) -> Params {
    let p = stats[0].mean.len();
    let priors: Vec<f64> = stats.iter().map(|s| s.weight / n as f64).collect();
    let residual: Vec<f64> = stats
        .iter()
        .zip(dims)
        .map(|(s, &d)| (s.trace - s.eigenvalues[..d].iter().sum::<f64>()).max(0.0))
        .collect();
    let b: Vec<f64> = if variant.common_noise() {
        let num: f64 = priors.iter().zip(&residual).map(|(pi, r)| pi * r).sum();
        let xi: f64 = priors.iter().zip(dims).map(|(pi, &d)| pi * d as f64).sum();
        let common = (num / (p as f64 - xi)).max(B_FLOOR);
        vec![common; stats.len()]
    } else {
        residual
            .iter()
            .zip(dims)
            .map(|(r, &d)| (r / (p - d) as f64).max(B_FLOOR))
            .collect()
    };
    let a = stats
        .iter()
        .zip(dims)
        .zip(&b)
        .map(|((s, &d), &bk)| s.eigenvalues[..d].iter().map(|&l| l.max(bk + A_MARGIN)).collect())
        .collect();
    Params {
        priors,
        means: stats.iter().map(|s| s.mean.clone()).collect(),
        subspaces: stats
            .iter()
            .zip(dims)
            .map(|(s, &d)| s.eigenvectors.columns(0, d).into_owned())
            .collect(),
        dims: dims.to_vec(),
        a,
        b,
        traces: stats.iter().map(|s| s.trace).collect(),
    }
}

// Expected complete-data log-likelihood of `params` under the weights the
// group statistics were computed from.
fn q_value(stats: &[GroupStats], params: &Params) -> f64 {
    let p = stats[0].mean.len() as f64;
    stats
        .iter()
        .enumerate()
        .map(|(g, s)| {
            let d = params.dims[g];
            let a = &params.a[g];
            let b = params.b[g];
            let signal: f64 = s.eigenvalues[..d].iter().zip(a).map(|(l, a)| l / a).sum();
            let captured: f64 = s.eigenvalues[..d].iter().sum();
            let quad = signal + (s.trace - captured).max(0.0) / b;
            let logdet = a.iter().map(|v| v.ln()).sum::<f64>() + (p - d as f64) * b.ln();
            s.weight * (params.priors[g].ln() - 0.5 * (quad + logdet + p * LN_2PI))
        })
        .sum()
}

fn scree_dims(stats: &[GroupStats], threshold: f64) -> Vec<usize> {
    stats
        .iter()
        .map(|s| {
            let p = s.eigenvalues.len();
            let cap_n = (s.weight.floor() as usize).saturating_sub(1).max(1);
            cattell_scree(&s.eigenvalues, threshold).min(p - 1).min(cap_n).max(1)
        })
        .collect()
}

fn e_step(z: &DMatrix<f64>, params: &Params) -> Result<EStep> {
    let (n, p) = z.shape();
    let k = params.priors.len();
    let consts: Vec<f64> = (0..k)
        .map(|g| {
            let d = params.dims[g];
            params.priors[g].ln()
                - 0.5
                    * (params.a[g].iter().map(|v| v.ln()).sum::<f64>()
                        + (p - d) as f64 * params.b[g].ln()
                        + p as f64 * LN_2PI)
        })
        .collect();
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = z.row(i).transpose();
            let logs: Vec<f64> = (0..k)
                .map(|g| {
                    let c = &x - &params.means[g];
                    let proj = params.subspaces[g].tr_mul(&c);
                    let r2 = c.norm_squared();
                    let in_sub: f64 = proj.iter().map(|v| v * v).sum();
                    let signal: f64 = proj.iter().zip(&params.a[g]).map(|(v, a)| v * v / a).sum();
                    consts[g] - 0.5 * (signal + (r2 - in_sub).max(0.0) / params.b[g])
                })
                .collect();
            let lse = log_sum_exp(&logs);
            let t: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
            let q: f64 = t.iter().zip(&logs).map(|(t, l)| if *t > 0.0 { t * l } else { 0.0 }).sum();
            (t, lse, q)
        })
        .collect();
    let mut posteriors = DMatrix::zeros(n, k);
    let mut loglik = 0.0;
    let mut q_total = 0.0;
    for (i, (t, lse, q)) in rows.into_iter().enumerate() {
        let s: f64 = t.iter().sum();
        for (g, v) in t.into_iter().enumerate() {
            posteriors[(i, g)] = v / s;
        }
        loglik += lse;
        q_total += q;
    }
    if !loglik.is_finite() {
        return Err(FcurveError::Numeric("non-finite log-likelihood".into()));
    }
    Ok(EStep {
        posteriors,
        loglik,
        q_value: q_total,
    })
}

fn working_coordinates(dataset: &FunctionalDataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let roots = spd_roots(dataset.basis.gram())?;
    let z = &dataset.coefficients * &roots.sqrt;
    Ok((z, roots.inv_sqrt))
}

fn initial_labels(z: &DMatrix<f64>, config: &FlmConfig) -> Result<Vec<usize>> {
    let n = z.nrows();
    match config.init {
        InitMethod::KMeans => {
            let km = KMeansConfig {
                restarts: 10,
                ..KMeansConfig::default()
            };
            let part = kmeans_with(z, config.k, config.seed, &km)?;
            if part.k < config.k {
                return Err(FcurveError::InsufficientData(format!(
                    "only {} distinct curves for K = {}",
                    part.k, config.k
                )));
            }
            Ok(part.assignments)
        }
        InitMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.k)).collect();
            // every group starts with at least one member
            for g in 0..config.k {
                labels[g] = g;
            }
            Ok(labels)
        }
    }
}

/// Fit the mixture by EM, initialized as configured.
pub fn em_fit(dataset: &FunctionalDataset, config: &FlmConfig) -> Result<FlmModel> {
    config.validate()?;
    if dataset.n() <= config.k {
        return Err(FcurveError::InsufficientData(format!(
            "n = {} must exceed K = {}",
            dataset.n(),
            config.k
        )));
    }
    let (z, inv_sqrt) = working_coordinates(dataset)?;
    let labels = initial_labels(&z, config)?;
    run_em(&z, inv_sqrt, config, &labels)
}

/// Fit the mixture by EM starting from a hard partition.
pub fn em_fit_from_labels(dataset: &FunctionalDataset, config: &FlmConfig, labels: &[usize]) -> Result<FlmModel> {
    config.validate()?;
    if labels.len() != dataset.n() {
        return Err(FcurveError::Dimension {
            expected: dataset.n(),
            got: labels.len(),
        });
    }
    if labels.iter().any(|&l| l >= config.k) {
        return Err(FcurveError::Parameter("initial label exceeds K".into()));
    }
    if dataset.n() <= config.k {
        return Err(FcurveError::InsufficientData(format!(
            "n = {} must exceed K = {}",
            dataset.n(),
            config.k
        )));
    }
    let (z, inv_sqrt) = working_coordinates(dataset)?;
    run_em(&z, inv_sqrt, config, labels)
}

fn run_em(z: &DMatrix<f64>, inv_sqrt: DMatrix<f64>, config: &FlmConfig, labels: &[usize]) -> Result<FlmModel> {
    let (n, p) = z.shape();
    if p < 2 {
        return Err(FcurveError::Parameter("need at least 2 coefficients".into()));
    }
    let mut post = DMatrix::zeros(n, config.k);
    for (i, &l) in labels.iter().enumerate() {
        post[(i, l)] = 1.0;
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut prev_dims: Option<Vec<usize>> = None;
    let mut prev_q = f64::NEG_INFINITY;
    let mut converged = false;
    let mut params;
    let mut iteration = 0;
    loop {
        let stats = group_stats(z, &post, iteration)?;
        let cand_dims = scree_dims(&stats, config.scree_threshold);
        params = params_for_dims(&stats, &cand_dims, config.variant, n);
        if let Some(old) = &prev_dims {
            if *old != cand_dims {
                let keep = params_for_dims(&stats, old, config.variant, n);
                if q_value(&stats, &params) < prev_q && q_value(&stats, &keep) >= q_value(&stats, &params) {
                    params = keep;
                }
            }
        }
        let e = e_step(z, &params)?;
        if let Some(&last) = trace.last() {
            if e.loglik < last - MONOTONE_SLACK {
                return Err(FcurveError::NonMonotone {
                    iteration,
                    previous: last,
                    current: e.loglik,
                });
            }
        }
        let delta = trace.last().map(|&l| (e.loglik - l).abs());
        trace.push(e.loglik);
        post = e.posteriors;
        prev_q = e.q_value;
        prev_dims = Some(params.dims.clone());
        iteration += 1;
        if delta.is_some_and(|d| d < config.tol) {
            converged = true;
            break;
        }
        if iteration >= config.max_iter {
            break;
        }
    }

    Ok(FlmModel {
        variant: config.variant,
        priors: params.priors,
        means: params.means,
        subspaces: params.subspaces,
        dims: params.dims,
        a: params.a,
        b: params.b,
        group_traces: params.traces,
        posteriors: post,
        loglik_trace: trace,
        converged,
        inv_sqrt_gram: inv_sqrt,
    })
}

impl FlmModel {
    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn p(&self) -> usize {
        self.means[0].len()
    }

    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("at least one iteration")
    }

    pub fn n_params(&self) -> usize {
        n_params(self.k(), self.p(), &self.dims, self.variant)
    }

    pub fn score(&self, seed: u64) -> ModelScore {
        let n = self.posteriors.nrows();
        ModelScore {
            k: self.k(),
            variant: self.variant,
            seed,
            loglik: self.loglik(),
            n_params: self.n_params(),
            bic: bic(self.loglik(), self.n_params(), n),
        }
    }

    /// Maximum a posteriori assignment, ties to the lower group index.
    pub fn labels(&self) -> Vec<usize> {
        self.posteriors
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for g in 1..r.len() {
                    if r[g] > r[best] {
                        best = g;
                    }
                }
                best
            })
            .collect()
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.labels(), self.loglik())
    }

    /// Basis coefficients of group `k`'s mean curve.
    pub fn mean_coefficients(&self, k: usize) -> DVector<f64> {
        &self.inv_sqrt_gram * &self.means[k]
    }

    /// Basis coefficients of the `j`-th subspace function of group `k`; unit L₂ norm.
    pub fn subspace_function(&self, k: usize, j: usize) -> DVector<f64> {
        &self.inv_sqrt_gram * self.subspaces[k].column(j)
    }

    /// Share of group `k`'s variability captured by its `d_k` subspace variances.
    pub fn explained_variability(&self, k: usize) -> f64 {
        if self.group_traces[k] > 0.0 {
            self.a[k].iter().sum::<f64>() / self.group_traces[k]
        } else {
            0.0
        }
    }
}

/// Group mean `± multiple·√a_kj` times subspace function `j` of group `k`,
/// as (plus, minus, mean) coefficient vectors.
pub fn cluster_effects(
    model: &FlmModel,
    k: usize,
    j: usize,
    multiple: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if k >= model.k() {
        return Err(FcurveError::Parameter(format!("group {k} out of range")));
    }
    if j >= model.dims[k] {
        return Err(FcurveError::Parameter(format!(
            "subspace direction {j} out of range for d = {}",
            model.dims[k]
        )));
    }
    let mean = model.mean_coefficients(k);
    let step = model.subspace_function(k, j) * (multiple * model.a[k][j].max(0.0).sqrt());
    Ok((&mean + &step, &mean - &step, mean))
}

/// Outcome of a BIC sweep.
#[derive(Debug, Clone)]
pub struct ModelSelection {
    pub best: FlmModel,
    pub best_score: ModelScore,
    /// One entry per successful fit, ordered by (K, variant, seed).
    pub scores: Vec<ModelScore>,
    pub failures: Vec<String>,
}

/// Fit every (K, variant, seed) combination and keep the BIC maximizer;
/// ties go to smaller K, then fewer parameters.
pub fn select_model(
    dataset: &FunctionalDataset,
    k_range: &[usize],
    variants: &[FlmVariant],
    seeds: &[u64],
    base: &FlmConfig,
) -> Result<ModelSelection> {
    if k_range.is_empty() || variants.is_empty() || seeds.is_empty() {
        return Err(FcurveError::Parameter("empty model-selection range".into()));
    }
    let mut combos = Vec::new();
    for &k in k_range {
        for &v in variants {
            for &s in seeds {
                combos.push((k, v, s));
            }
        }
    }
    let fits: Vec<(usize, FlmVariant, u64, Result<FlmModel>)> = combos
        .par_iter()
        .map(|&(k, variant, seed)| {
            let cfg = FlmConfig {
                k,
                variant,
                seed,
                ..*base
            };
            (k, variant, seed, em_fit(dataset, &cfg))
        })
        .collect();

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    let mut best: Option<(ModelScore, FlmModel)> = None;
    for (k, variant, seed, fit) in fits {
        match fit {
            Ok(model) => {
                let s = model.score(seed);
                let replace = match &best {
                    None => true,
                    Some((b, _)) => {
                        s.bic > b.bic || (s.bic == b.bic && (s.k, s.n_params) < (b.k, b.n_params))
                    }
                };
                scores.push(s.clone());
                if replace {
                    best = Some((s, model));
                }
            }
            Err(e) => failures.push(format!("K={k} {} seed={seed}: {e}", variant.name())),
        }
    }
    let (best_score, best) = best.ok_or(FcurveError::AllFitsFailed(failures.clone()))?;
    Ok(ModelSelection {
        best,
        best_score,
        scores,
        failures,
    })
}
