//! Two-stage and distance-based functional clustering.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FcurveError, Result};
use crate::fpca::{fpca, FpcaResult};
use crate::smooth::FunctionalDataset;

/// Hard assignment of `n` units to `k` non-empty clusters.
///
/// Labels are zero-based and numbered in order of first appearance, so two
/// runs that find the same grouping produce identical label vectors.
/// Exported files use one-based labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<usize>,
    pub k: usize,
    pub sizes: Vec<usize>,
    /// Inertia for k-means, merge height for hierarchical clustering.
    pub diagnostic: f64,
}

impl Partition {
    /// Relabel by first appearance and recount sizes.
    pub fn from_labels(labels: &[usize], diagnostic: f64) -> Partition {
        let mut map: Vec<Option<usize>> = Vec::new();
        let mut next = 0;
        let mut assignments = Vec::with_capacity(labels.len());
        for &l in labels {
            if l >= map.len() {
                map.resize(l + 1, None);
            }
            let id = *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            assignments.push(id);
        }
        let mut sizes = vec![0; next];
        for &a in &assignments {
            sizes[a] += 1;
        }
        Partition {
            assignments,
            k: next,
            sizes,
            diagnostic,
        }
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    /// Cluster shares in percent.
    pub fn shares(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.sizes.iter().map(|&s| 100.0 * s as f64 / n).collect()
    }
}

/// Adjusted Rand index between two labelings of the same units.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same units");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&c| c2(c)).sum();
    let rows: f64 = (0..ka)
        .map(|i| c2(table[i * kb..(i + 1) * kb].iter().sum()))
        .sum();
    let cols: f64 = (0..kb)
        .map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum()))
        .sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        // both labelings trivial in the same way
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the relative inertia decrease falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 50,
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

/// One Lloyd run, with the inertia after every iteration.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub trace: Vec<f64>,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(c.row(k).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn distinct_rows(points: &DMatrix<f64>) -> usize {
    let mut rows: Vec<Vec<u64>> = points
        .row_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

fn kmeans_pp(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, m) = points.shape();
    let mut centers = DMatrix::zeros(k, m);
    let first = rng.random_range(0..n);
    centers.set_row(0, &points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            // never land on a zero-weight point through rounding
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(c, &points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centers, c));
        }
    }
    centers
}

fn assign(points: &DMatrix<f64>, centers: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let k = centers.nrows();
    (0..points.nrows())
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for c in 0..k {
                let d = sq_dist(points, i, centers, c);
                if d < best.0 {
                    best = (d, c);
                }
            }
            (best.1, best.0)
        })
        .unzip()
}

fn lloyd(points: &DMatrix<f64>, k: usize, seed: u64, config: &KMeansConfig) -> KMeansRun {
    let (n, m) = points.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(points, k, &mut rng);
    let (mut labels, mut dists) = assign(points, &centers);
    let mut trace = vec![dists.iter().sum::<f64>()];
    for _ in 0..config.max_iter {
        let mut sums = DMatrix::zeros(k, m);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let l = labels[i];
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c) / counts[c] as f64;
                centers.set_row(c, &mean);
            }
        }
        // re-seed empty clusters from the point farthest from its centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                counts[c] = 1;
                labels[i] = c;
                dists[i] = 0.0;
                centers.set_row(c, &points.row(i));
            }
        }
        let (new_labels, new_dists) = assign(points, &centers);
        let inertia: f64 = new_dists.iter().sum();
        let prev = *trace.last().expect("non-empty");
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        trace.push(inertia);
        if !changed || (prev - inertia) <= config.tol * prev.abs() {
            break;
        }
    }
    KMeansRun {
        inertia: *trace.last().expect("non-empty"),
        labels,
        trace,
    }
}

/// Single seeded Lloyd run, exposing the inertia trace.
pub fn kmeans_single(points: &DMatrix<f64>, k: usize, seed: u64, config: &KMeansConfig) -> Result<KMeansRun> {
    check_k(points.nrows(), k)?;
    Ok(lloyd(points, k.min(distinct_rows(points)), seed, config))
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(FcurveError::Parameter(format!(
            "cluster count {k} must be in 1..={n}"
        )));
    }
    Ok(())
}

/// k-means with k-means++ seeding, best of `config.restarts` runs.
///
/// When fewer than `k` distinct points exist, the partition has as many
/// clusters as distinct points.
pub fn kmeans_with(points: &DMatrix<f64>, k: usize, seed: u64, config: &KMeansConfig) -> Result<Partition> {
    check_k(points.nrows(), k)?;
    if points.ncols() == 0 {
        return Err(FcurveError::Parameter("points have no coordinates".into()));
    }
    let k = k.min(distinct_rows(points));
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..config.restarts.max(1)).map(|_| master.next_u64()).collect();
    let runs: Vec<KMeansRun> = seeds.par_iter().map(|&s| lloyd(points, k, s, config)).collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.inertia.total_cmp(&b.inertia).then(ia.cmp(ib)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    Ok(Partition::from_labels(&best.labels, best.inertia))
}

pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<Partition> {
    kmeans_with(
        points,
        k,
        seed,
        &KMeansConfig {
            restarts,
            ..KMeansConfig::default()
        },
    )
}

/// What the two-stage method clusters on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Coefficients,
    FpcaScores(usize),
}

/// Filter onto basis coefficients or FPCA scores, then run k-means.
pub fn two_stage(dataset: &FunctionalDataset, feature: Feature, k: usize, seed: u64) -> Result<Partition> {
    two_stage_with(dataset, feature, k, seed, &KMeansConfig::default())
}

pub fn two_stage_with(
    dataset: &FunctionalDataset,
    feature: Feature,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<Partition> {
    let points = match feature {
        Feature::Coefficients => dataset.coefficients.clone(),
        Feature::FpcaScores(q) => fpca(dataset)?.scores(q)?,
    };
    kmeans_with(&points, k, seed, config)
}

/// `d_q(x_i, x_j)`: Euclidean distance between the first `q` FPCA scores.
pub fn semimetric_fpca(result: &FpcaResult, i: usize, j: usize, q: usize) -> Result<f64> {
    let n = result.scores.nrows();
    if i >= n || j >= n {
        return Err(FcurveError::Parameter(format!(
            "index ({i}, {j}) out of range for {n} units"
        )));
    }
    if q == 0 || q > result.scores.ncols() {
        return Err(FcurveError::Parameter(format!("q = {q} out of range")));
    }
    Ok((0..q)
        .map(|l| {
            let d = result.scores[(i, l)] - result.scores[(j, l)];
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Symmetric non-negative matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> DistanceMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| if i < j { f(i, j) } else { 0.0 }).collect())
            .collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                data[i * n + j] = rows[i][j];
                data[j * n + i] = rows[i][j];
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<DistanceMatrix> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(FcurveError::Dimension { expected: n, got: m.ncols() });
        }
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(FcurveError::Parameter(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !(v >= 0.0) || v != m[(j, i)] {
                    return Err(FcurveError::Parameter(format!(
                        "entry ({i}, {j}) is negative, NaN or asymmetric"
                    )));
                }
            }
        }
        Ok(DistanceMatrix {
            n,
            data: m.transpose().as_slice().to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Pairwise FPCA semimetric over all units.
pub fn semimetric_matrix(result: &FpcaResult, q: usize) -> Result<DistanceMatrix> {
    if q == 0 || q > result.scores.ncols() {
        return Err(FcurveError::Parameter(format!("q = {q} out of range")));
    }
    let s = result.scores.columns(0, q).into_owned();
    Ok(DistanceMatrix::from_fn(s.nrows(), |i, j| {
        (s.row(i) - s.row(j)).norm()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Ward,
    Complete,
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = FcurveError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ward" => Ok(Linkage::Ward),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(FcurveError::Config(format!("unknown linkage '{other}'"))),
        }
    }
}

/// Agglomerative clustering cut at `k` clusters.
///
/// The closest pair is merged first; equal distances are resolved by the
/// smaller (first, second) index pair. Ward works on squared distances
/// through the Lance–Williams update; reported heights are unsquared.
pub fn hierarchical(dist: &DistanceMatrix, linkage: Linkage, k: usize) -> Result<Partition> {
    let n = dist.n();
    check_k(n, k)?;
    let mut d: Vec<f64> = dist.data.clone();
    if linkage == Linkage::Ward {
        d.iter_mut().for_each(|v| *v *= *v);
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    let nearest = |d: &[f64], active: &[bool], i: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j != i && active[j] && d[i * n + j] < best.0 {
                best = (d[i * n + j], j);
            }
        }
        best
    };
    let mut nn: Vec<(f64, usize)> = (0..n).map(|i| nearest(&d, &active, i)).collect();
    let mut height = 0.0;

    for _ in 0..(n - k) {
        let mut pick = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let (dv, j) = nn[i];
            let (a, b) = (i.min(j), i.max(j));
            if dv < pick.0 || (dv == pick.0 && (a, b) < (pick.1, pick.2)) {
                pick = (dv, a, b);
            }
        }
        let (dij, i, j) = pick;
        height = if linkage == Linkage::Ward { dij.sqrt() } else { dij };
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let (dim, djm) = (d[i * n + m], d[j * n + m]);
            let nm = size[m] as f64;
            let new = match linkage {
                Linkage::Complete => dim.max(djm),
                Linkage::Average => (ni * dim + nj * djm) / (ni + nj),
                Linkage::Ward => {
                    (((ni + nm) * dim + (nj + nm) * djm - nm * dij) / (ni + nj + nm)).max(0.0)
                }
            };
            d[i * n + m] = new;
            d[m * n + i] = new;
        }
        active[j] = false;
        size[i] += size[j];
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        for m in 0..n {
            if !active[m] {
                continue;
            }
            if m == i || nn[m].1 == i || nn[m].1 == j {
                nn[m] = nearest(&d, &active, m);
            } else {
                let cand = d[m * n + i];
                if cand < nn[m].0 || (cand == nn[m].0 && i < nn[m].1) {
                    nn[m] = (cand, i);
                }
            }
        }
    }

    let mut labels = vec![0usize; n];
    for (c, mem) in members.iter().enumerate() {
        for &u in mem {
            labels[u] = c;
        }
    }
    Ok(Partition::from_labels(&labels, height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabel_by_first_appearance() {
        let p = Partition::from_labels(&[4, 4, 1, 7, 1], 0.0);
        assert_eq!(p.assignments, vec![0, 0, 1, 2, 1]);
        assert_eq!(p.sizes, vec![2, 2, 1]);
        assert_eq!(p.k, 3);
    }

    #[test]
    fn shares_from_labels() {
        let p = Partition::from_labels(&[0, 0, 1, 1], 0.0);
        assert_eq!(p.shares(), vec![50.0, 50.0]);
    }

    #[test]
    fn ari_basic_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 0, 0]), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(v < 0.0);
    }

    #[test]
    fn k_bounds() {
        let pts = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(kmeans(&pts, 4, 0, 1).is_err());
        assert!(kmeans(&pts, 0, 0, 1).is_err());
        let dm = DistanceMatrix::from_fn(3, |i, j| (i as f64 - j as f64).abs());
        assert!(hierarchical(&dm, Linkage::Ward, 4).is_err());
    }

    #[test]
    fn k_one_and_k_n() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 3.0]);
        let one = kmeans(&pts, 1, 1, 3).unwrap();
        // total sum of squares about the centroid (1, 1.25)
        let tss = 1.0 + 1.5625 + 0.0 + 1.5625 + 1.0 + 0.5625 + 4.0 + 3.0625;
        assert!((one.diagnostic - tss).abs() < 1e-12);
        let all = kmeans(&pts, 4, 1, 3).unwrap();
        assert_eq!(all.diagnostic, 0.0);
        assert_eq!(all.k, 4);
    }

    #[test]
    fn identical_points_give_one_cluster() {
        let pts = DMatrix::from_element(5, 3, 0.7);
        let p = kmeans(&pts, 3, 9, 5).unwrap();
        assert_eq!(p.k, 1);
        assert_eq!(p.sizes, vec![5]);
    }

    #[test]
    fn two_far_pairs() {
        let pos: [f64; 4] = [0.0, 0.1, 10.0, 10.2];
        let dm = DistanceMatrix::from_fn(4, |i, j| (pos[i] - pos[j]).abs());
        for l in [Linkage::Ward, Linkage::Complete, Linkage::Average] {
            let p = hierarchical(&dm, l, 2).unwrap();
            assert_eq!(p.assignments, vec![0, 0, 1, 1], "{l:?}");
        }
        let s = hierarchical(&dm, Linkage::Average, 4).unwrap();
        assert_eq!(s.assignments, vec![0, 1, 2, 3]);
    }

    #[test]
    fn distance_matrix_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(DistanceMatrix::from_matrix(&bad).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(DistanceMatrix::from_matrix(&ok).unwrap().get(0, 1), 1.0);
    }

    #[test]
    fn ward_heights_match_centroid_formula() {
        // merging singletons a and b: Ward height is the plain distance
        let pos: [f64; 3] = [0.0, 1.0, 5.0];
        let dm = DistanceMatrix::from_fn(3, |i, j| (pos[i] - pos[j]).abs());
        let p = hierarchical(&dm, Linkage::Ward, 2).unwrap();
        assert!((p.diagnostic - 1.0).abs() < 1e-12);
        // then {0,1} with {5}: sqrt(2·n1·n2/(n1+n2))·|c1 − c2|
        let p = hierarchical(&dm, Linkage::Ward, 1).unwrap();
        let expect = (2.0 * 2.0 * 1.0 / 3.0f64).sqrt() * 4.5;
        assert!((p.diagnostic - expect).abs() < 1e-12);
    }
}
