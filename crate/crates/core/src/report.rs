//! Run manifests and the artifacts written from finished analyses:
//! partition/score/BIC tables, model summaries, composition grids and SVG plots.
//!
//! Every artifact carries the hash of the manifest that produced it: a
//! `# manifest=<hash>` first line in CSV, a `manifest` field in JSON and an
//! XML comment in SVG.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{BSplineBasis, BasisSpec};
use crate::cluster::{Linkage, Partition};
use crate::error::{FcurveError, Result};
use crate::flm::{FlmModel, FlmVariant, InitMethod, ModelScore};
use crate::fpca::FpcaResult;
use crate::ingest::{CountryEntry, CurveKey, Sex};
use crate::smooth::LambdaMode;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a run computes after smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Analysis {
    Smooth,
    Fpca {
        /// Components exported as scores and plotted.
        q: usize,
    },
    TwoStage {
        k: usize,
        /// Cluster on the first `q` FPCA scores; on coefficients when absent.
        q: Option<usize>,
        seed: u64,
        restarts: usize,
    },
    Distance {
        k: usize,
        q: usize,
        linkage: Linkage,
    },
    Flm {
        k_range: Vec<usize>,
        variant: FlmVariant,
        threshold: f64,
        init: InitMethod,
        seeds: Vec<u64>,
        max_iter: usize,
        tol: f64,
    },
}

impl Analysis {
    pub fn name(&self) -> &'static str {
        match self {
            Analysis::Smooth => "smooth",
            Analysis::Fpca { .. } => "fpca",
            Analysis::TwoStage { .. } => "two-stage",
            Analysis::Distance { .. } => "distance",
            Analysis::Flm { .. } => "flm",
        }
    }
}

/// Everything needed to re-run an analysis from the panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Panel CSV the run reads.
    pub panel: String,
    pub sex: Option<Sex>,
    pub basis: BasisSpec,
    pub lambda_mode: LambdaMode,
    pub lambda_grid: Vec<f64>,
    /// Area grouping for composition grids.
    pub countries: Vec<CountryEntry>,
    pub analysis: Analysis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    /// SHA-256 of the panel CSV bytes.
    pub input_sha256: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Hash of version, config and input fingerprint; timestamps excluded.
    pub hash: String,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(config: RunConfig, input_sha256: String) -> RunManifest {
        let version = env!("CARGO_PKG_VERSION").to_string();
        let hash = Self::compute_hash(&version, &config, &input_sha256);
        RunManifest {
            version,
            config,
            input_sha256,
            started_unix: now_unix(),
            finished_unix: None,
            hash,
        }
    }

    fn compute_hash(version: &str, config: &RunConfig, input: &str) -> String {
        let body = serde_json::json!({ "version": version, "config": config, "input": input });
        sha256_hex(body.to_string().as_bytes())
    }

    /// True when the stored hash matches the manifest contents.
    pub fn verify(&self) -> bool {
        self.hash == Self::compute_hash(&self.version, &self.config, &self.input_sha256)
    }

    pub fn finish(&mut self) {
        self.finished_unix = Some(now_unix());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        let m: RunManifest = serde_json::from_str(text)?;
        if !m.verify() {
            return Err(FcurveError::Config("manifest hash does not match its contents".into()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| FcurveError::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FcurveError::io(path, e))
}

fn manifest_line(out: &mut String, manifest: Option<&str>) {
    if let Some(h) = manifest {
        let _ = writeln!(out, "# manifest={h}");
    }
}

/// Manifest hash from a CSV's leading comment, if any.
pub fn csv_manifest(text: &str) -> Option<String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# manifest=").map(|s| s.trim().to_string()))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
}

fn parse_err(line: usize, message: impl Into<String>) -> FcurveError {
    FcurveError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(line: usize, field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} '{field}'")))
}

fn parse_key(line: usize, fields: &[&str]) -> Result<CurveKey> {
    Ok(CurveKey {
        country: fields[0].trim().to_string(),
        year: parse_field(line, fields[1], "year")?,
        sex: fields[2].trim().parse().map_err(|_| parse_err(line, "bad sex"))?,
    })
}

fn expect_header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, prefix: &str) -> Result<Vec<String>> {
    let (line, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    if !header.starts_with(prefix) {
        return Err(parse_err(line, format!("expected header starting '{prefix}'")));
    }
    Ok(header.split(',').map(|s| s.trim().to_string()).collect())
}

fn check_aligned(keys: usize, rows: usize) -> Result<()> {
    if keys != rows {
        return Err(FcurveError::Dimension {
            expected: keys,
            got: rows,
        });
    }
    Ok(())
}

/// `country,year,sex,cluster` with one-based labels.
pub fn partition_csv(keys: &[CurveKey], partition: &Partition, manifest: Option<&str>) -> Result<String> {
    check_aligned(keys.len(), partition.n())?;
    let mut s = String::new();
    manifest_line(&mut s, manifest);
    let _ = writeln!(s, "# diagnostic={}", partition.diagnostic);
    s.push_str("country,year,sex,cluster\n");
    for (k, &a) in keys.iter().zip(&partition.assignments) {
        let _ = writeln!(s, "{},{},{},{}", k.country, k.year, k.sex, a + 1);
    }
    Ok(s)
}

pub fn read_partition_csv(text: &str) -> Result<(Vec<CurveKey>, Partition)> {
    let diagnostic = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# diagnostic="))
        .map_or(Ok(f64::NAN), |v| parse_field(1, v, "diagnostic"))?;
    let mut lines = data_lines(text);
    expect_header(&mut lines, "country,year,sex,cluster")?;
    let mut keys = Vec::new();
    let mut labels = Vec::new();
    for (line, l) in lines {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", f.len())));
        }
        keys.push(parse_key(line, &f)?);
        let c: usize = parse_field(line, f[3], "cluster")?;
        if c == 0 {
            return Err(parse_err(line, "cluster labels start at 1"));
        }
        labels.push(c - 1);
    }
    Ok((keys, Partition::from_labels(&labels, diagnostic)))
}

/// `country,year,sex,pc1..pcq`.
pub fn scores_csv(keys: &[CurveKey], scores: &DMatrix<f64>, manifest: Option<&str>) -> Result<String> {
    check_aligned(keys.len(), scores.nrows())?;
    let mut s = String::new();
    manifest_line(&mut s, manifest);
    s.push_str("country,year,sex");
    for l in 1..=scores.ncols() {
        let _ = write!(s, ",pc{l}");
    }
    s.push('\n');
    for (k, row) in keys.iter().zip(scores.row_iter()) {
        let _ = write!(s, "{},{},{}", k.country, k.year, k.sex);
        for v in row.iter() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn read_scores_csv(text: &str) -> Result<(Vec<CurveKey>, DMatrix<f64>)> {
    let mut lines = data_lines(text);
    let header = expect_header(&mut lines, "country,year,sex")?;
    let q = header.len() - 3;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for (line, l) in lines {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != q + 3 {
            return Err(parse_err(line, format!("expected {} fields, got {}", q + 3, f.len())));
        }
        keys.push(parse_key(line, &f)?);
        for v in &f[3..] {
            values.push(parse_field::<f64>(line, v, "score")?);
        }
    }
    Ok((keys.clone(), DMatrix::from_row_slice(keys.len(), q, &values)))
}

/// `k,variant,seed,loglik,n_params,bic`, one row per fitted model.
pub fn bic_table_csv(scores: &[ModelScore], manifest: Option<&str>) -> String {
    let mut s = String::new();
    manifest_line(&mut s, manifest);
    s.push_str("k,variant,seed,loglik,n_params,bic\n");
    for m in scores {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m.k,
            m.variant.name(),
            m.seed,
            m.loglik,
            m.n_params,
            m.bic
        );
    }
    s
}

pub fn read_bic_table_csv(text: &str) -> Result<Vec<ModelScore>> {
    let mut lines = data_lines(text);
    expect_header(&mut lines, "k,variant,seed,loglik,n_params,bic")?;
    lines
        .map(|(line, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(parse_err(line, format!("expected 6 fields, got {}", f.len())));
            }
            Ok(ModelScore {
                k: parse_field(line, f[0], "k")?,
                variant: f[1].parse().map_err(|_| parse_err(line, "bad variant"))?,
                seed: parse_field(line, f[2], "seed")?,
                loglik: parse_field(line, f[3], "loglik")?,
                n_params: parse_field(line, f[4], "n_params")?,
                bic: parse_field(line, f[5], "bic")?,
            })
        })
        .collect()
}

/// Human-readable FLM summary plus the full fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub manifest: Option<String>,
    pub k: usize,
    pub variant: FlmVariant,
    pub priors: Vec<f64>,
    pub dims: Vec<usize>,
    /// Subspace variances multiplied by 10⁴.
    pub a_x1e4: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub b_x1e4: Vec<f64>,
    pub explained_variability: Vec<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub model: FlmModel,
}

impl ModelReport {
    pub fn new(model: &FlmModel, manifest: Option<&str>) -> ModelReport {
        let score = model.score(0);
        ModelReport {
            manifest: manifest.map(str::to_string),
            k: model.k(),
            variant: model.variant,
            priors: model.priors.clone(),
            dims: model.dims.clone(),
            a_x1e4: model
                .a
                .iter()
                .map(|a| a.iter().map(|v| v * 1e4).collect())
                .collect(),
            b: model.b.clone(),
            b_x1e4: model.b.iter().map(|v| v * 1e4).collect(),
            explained_variability: (0..model.k()).map(|k| model.explained_variability(k)).collect(),
            loglik: score.loglik,
            n_params: score.n_params,
            bic: score.bic,
            model: model.clone(),
        }
    }

    /// Per-cluster table: prior, dimension, a×10⁴, b raw and ×10⁴.
    pub fn table(&self) -> String {
        let mut s = String::from("cluster  pi      d  a_kj (x1e4)                      b          b (x1e4)\n");
        for k in 0..self.k {
            let a: Vec<String> = self.a_x1e4[k].iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(
                s,
                "{:<8} {:<7.4} {:<2} {:<32} {:<10.3e} {:.3}",
                k + 1,
                self.priors[k],
                self.dims[k],
                a.join(" "),
                self.b[k],
                self.b_x1e4[k]
            );
        }
        let _ = writeln!(
            s,
            "loglik {:.4}  parameters {}  BIC {:.4}",
            self.loglik, self.n_params, self.bic
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<ModelReport> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaReport {
    pub manifest: Option<String>,
    pub n_curves: usize,
    pub eigenvalues: Vec<f64>,
    pub varprop: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl FpcaReport {
    pub fn new(result: &FpcaResult, manifest: Option<&str>) -> FpcaReport {
        FpcaReport {
            manifest: manifest.map(str::to_string),
            n_curves: result.scores.nrows(),
            eigenvalues: result.eigenvalues.iter().cloned().collect(),
            varprop: result.varprop.iter().cloned().collect(),
            cumulative: result.cumulative_varprop(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<FpcaReport> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub area: String,
    pub country: String,
    /// One-based cluster label per year column.
    pub labels: Vec<Option<usize>>,
}

/// Country × year table of cluster labels, countries grouped by area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionGrid {
    pub years: Vec<i32>,
    pub rows: Vec<GridRow>,
    /// Percent of cells per cluster, cluster 1 first.
    pub shares: Vec<f64>,
}

const OTHER_AREA: &str = "Other";

fn shares_of(rows: &[GridRow]) -> Vec<f64> {
    let mut counts: Vec<usize> = Vec::new();
    let mut total = 0usize;
    for l in rows.iter().flat_map(|r| r.labels.iter().flatten()) {
        if *l > counts.len() {
            counts.resize(*l, 0);
        }
        counts[l - 1] += 1;
        total += 1;
    }
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
        .collect()
}

/// Lay out a single-sex partition as a composition grid. Countries missing
/// from `areas` are listed last under "Other".
pub fn composition_grid(partition: &Partition, keys: &[CurveKey], areas: &[CountryEntry]) -> Result<CompositionGrid> {
    check_aligned(keys.len(), partition.n())?;
    let years: Vec<i32> = keys.iter().map(|k| k.year).collect::<BTreeSet<_>>().into_iter().collect();
    let present: BTreeSet<&str> = keys.iter().map(|k| k.country.as_str()).collect();

    let mut order: Vec<(String, String)> = areas
        .iter()
        .filter(|c| present.contains(c.code.as_str()))
        .map(|c| (c.area.clone(), c.code.clone()))
        .collect();
    // group by area in first-appearance order, keeping the table order inside each area
    let area_rank: BTreeMap<&str, usize> = {
        let mut m = BTreeMap::new();
        for c in areas {
            let next = m.len();
            m.entry(c.area.as_str()).or_insert(next);
        }
        m
    };
    order.sort_by_key(|(a, _)| area_rank[a.as_str()]);
    for c in &present {
        if !areas.iter().any(|e| e.code == *c) {
            order.push((OTHER_AREA.to_string(), c.to_string()));
        }
    }
    let row_of: BTreeMap<String, usize> = order.iter().enumerate().map(|(i, (_, c))| (c.clone(), i)).collect();
    let col_of: BTreeMap<i32, usize> = years.iter().enumerate().map(|(i, &y)| (y, i)).collect();

    let mut rows: Vec<GridRow> = order
        .into_iter()
        .map(|(area, country)| GridRow {
            area,
            country,
            labels: vec![None; years.len()],
        })
        .collect();
    for (k, &a) in keys.iter().zip(&partition.assignments) {
        let cell = &mut rows[row_of[&k.country]].labels[col_of[&k.year]];
        if cell.is_some() {
            return Err(FcurveError::DuplicateKey(format!(
                "{}/{} appears twice; composition grids need a single sex",
                k.country, k.year
            )));
        }
        *cell = Some(a + 1);
    }
    let shares = shares_of(&rows);
    Ok(CompositionGrid { years, rows, shares })
}

impl CompositionGrid {
    /// `area,country,<year>...`; empty cells are blank.
    pub fn to_csv(&self, manifest: Option<&str>) -> String {
        let mut s = String::new();
        manifest_line(&mut s, manifest);
        s.push_str("area,country");
        for y in &self.years {
            let _ = write!(s, ",{y}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.area, r.country);
            for l in &r.labels {
                match l {
                    Some(l) => {
                        let _ = write!(s, ",{l}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<CompositionGrid> {
        let mut lines = data_lines(text);
        let header = expect_header(&mut lines, "area,country")?;
        let years = header[2..]
            .iter()
            .map(|y| parse_field(1, y, "year"))
            .collect::<Result<Vec<i32>>>()?;
        let mut rows = Vec::new();
        for (line, l) in lines {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != years.len() + 2 {
                return Err(parse_err(line, "row width does not match header"));
            }
            let labels = f[2..]
                .iter()
                .map(|v| {
                    if v.trim().is_empty() {
                        Ok(None)
                    } else {
                        parse_field(line, v, "label").map(Some)
                    }
                })
                .collect::<Result<Vec<Option<usize>>>>()?;
            rows.push(GridRow {
                area: f[0].to_string(),
                country: f[1].to_string(),
                labels,
            });
        }
        let shares = shares_of(&rows);
        Ok(CompositionGrid { years, rows, shares })
    }

    /// Colored cell chart of the grid.
    pub fn to_svg(&self, manifest: Option<&str>) -> String {
        let cell = 10.0;
        let left = 150.0;
        let top = 30.0;
        let width = left + cell * self.years.len() as f64 + 20.0;
        let height = top + cell * self.rows.len() as f64 + 40.0;
        let mut s = svg_open(width, height, manifest);
        let mut area: Option<&str> = None;
        for (i, r) in self.rows.iter().enumerate() {
            let y = top + cell * i as f64;
            if area != Some(r.area.as_str()) {
                area = Some(&r.area);
                let _ = writeln!(
                    s,
                    r##"<line x1="0" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000" stroke-width="0.5"/>"##,
                    width
                );
                let _ = writeln!(s, r#"<text x="2" y="{:.2}" font-size="8">{}</text>"#, y + 8.0, escape(&r.area));
            }
            let _ = writeln!(
                s,
                r#"<text x="70" y="{:.2}" font-size="8">{}</text>"#,
                y + 8.0,
                escape(&r.country)
            );
            for (j, l) in r.labels.iter().enumerate() {
                if let Some(l) = l {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{y:.2}" width="{cell}" height="{cell}" fill="{}"><title>{}</title></rect>"#,
                        left + cell * j as f64,
                        PALETTE[(l - 1) % PALETTE.len()],
                        l
                    );
                }
            }
        }
        for (j, yr) in self.years.iter().enumerate() {
            if yr % 10 == 0 {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" font-size="8">{yr}</text>"#,
                    left + cell * j as f64,
                    top + cell * self.rows.len() as f64 + 12.0
                );
            }
        }
        for (c, share) in self.shares.iter().enumerate() {
            let x = left + 70.0 * c as f64;
            let y = height - 10.0;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{}"/><text x="{:.2}" y="{y:.2}" font-size="8">{} ({share:.2}%)</text>"#,
                x,
                y - 7.0,
                PALETTE[c % PALETTE.len()],
                x + 10.0,
                c + 1
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(width: f64, height: f64, manifest: Option<&str>) -> String {
    let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    if let Some(h) = manifest {
        let _ = writeln!(s, "<!-- manifest={h} -->");
    }
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    s
}

/// One polyline of a curve plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// Legend text; unlabeled series are drawn without a legend entry.
    pub label: Option<String>,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub width: f64,
    pub dashed: bool,
}

impl Series {
    pub fn new(points: Vec<(f64, f64)>) -> Series {
        Series {
            label: None,
            points,
            color: "#999999".into(),
            width: 0.6,
            dashed: false,
        }
    }

    /// Curve with coefficients `coefs` evaluated on `grid`.
    pub fn from_coefficients(basis: &BSplineBasis, coefs: &[f64], grid: &[f64]) -> Result<Series> {
        let points = grid
            .iter()
            .map(|&t| Ok((t, basis.eval_curve(coefs, t, 0)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Series::new(points))
    }

    pub fn label(mut self, label: &str) -> Series {
        self.label = Some(label.to_string());
        self
    }

    pub fn color(mut self, color: &str) -> Series {
        self.color = color.to_string();
        self
    }

    pub fn width(mut self, width: f64) -> Series {
        self.width = width;
        self
    }

    pub fn dashed(mut self) -> Series {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub width: f64,
    pub height: f64,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            width: 640.0,
            height: 420.0,
            title: String::new(),
            x_label: "age".into(),
            y_label: String::new(),
            x_range: None,
            y_range: None,
        }
    }
}

impl PlotStyle {
    pub fn titled(title: &str) -> PlotStyle {
        PlotStyle {
            title: title.to_string(),
            ..PlotStyle::default()
        }
    }
}

const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom

fn padded_range(values: impl Iterator<Item = f64>, fallback: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        if v.is_finite() {
            (lo.min(v), hi.max(v))
        } else {
            (lo, hi)
        }
    });
    if !lo.is_finite() {
        return fallback;
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    w: f64,
    h: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN.0 + (x - self.x.0) / (self.x.1 - self.x.0) * (self.w - MARGIN.0 - MARGIN.1)
    }

    fn py(&self, y: f64) -> f64 {
        self.h - MARGIN.3 - (y - self.y.0) / (self.y.1 - self.y.0) * (self.h - MARGIN.2 - MARGIN.3)
    }

    fn axes(&self, s: &mut String, style: &PlotStyle) {
        let (x0, x1) = (self.px(self.x.0), self.px(self.x.1));
        let (y0, y1) = (self.py(self.y.0), self.py(self.y.1));
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000"/>"##,
            x1 - x0,
            y0 - y1
        );
        for t in ticks(self.x.0, self.x.1) {
            let x = self.px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000"/><text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"##,
                y0 + 4.0,
                y0 + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(self.y.0, self.y.1) {
            let y = self.py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                y + 3.5,
                fmt_tick(t)
            );
        }
        if !style.title.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
                self.w / 2.0,
                escape(&style.title)
            );
        }
        if !style.x_label.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                (x0 + x1) / 2.0,
                self.h - 12.0,
                escape(&style.x_label)
            );
        }
        if !style.y_label.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="14" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
                (y0 + y1) / 2.0,
                (y0 + y1) / 2.0,
                escape(&style.y_label)
            );
        }
    }
}

/// Curves as polylines over shared axes. Output depends only on the inputs.
pub fn plot_curves(series: &[Series], style: &PlotStyle, manifest: Option<&str>) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let frame = Frame {
        x: style.x_range.unwrap_or_else(|| padded_range(all().map(|p| p.0), (0.0, 110.0))),
        y: style.y_range.unwrap_or_else(|| padded_range(all().map(|p| p.1), (0.0, 1.0))),
        w: style.width,
        h: style.height,
    };
    let mut s = svg_open(style.width, style.height, manifest);
    frame.axes(&mut s, style);
    for ser in series {
        if ser.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let dash = if ser.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="{}"{dash} points="{}"/>"#,
            ser.color,
            ser.width,
            pts.join(" ")
        );
    }
    let labeled: Vec<&Series> = series.iter().filter(|s| s.label.is_some()).collect();
    for (i, ser) in labeled.iter().enumerate() {
        let x = style.width - MARGIN.1 - 90.0;
        let y = MARGIN.2 + 14.0 + 14.0 * i as f64;
        let dash = if ser.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}" font-size="10">{}</text></g>"#,
            x + 20.0,
            ser.color,
            x + 25.0,
            y + 3.5,
            escape(ser.label.as_deref().unwrap_or_default())
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Mean curve with `plus` and `minus` perturbations, labeled "+", "−" and "mean".
pub fn effect_series(
    basis: &BSplineBasis,
    plus: &[f64],
    minus: &[f64],
    mean: &[f64],
    grid: &[f64],
) -> Result<Vec<Series>> {
    Ok(vec![
        Series::from_coefficients(basis, plus, grid)?.label("+").color("#d62728").width(1.5),
        Series::from_coefficients(basis, minus, grid)?.label("−").color("#1f77b4").width(1.5).dashed(),
        Series::from_coefficients(basis, mean, grid)?.label("mean").color("#000000").width(2.0),
    ])
}

/// Score trajectories on the first two components. For each country a
/// polyline joins the points whose year is a multiple of `step` years after
/// the first year in `keys`; every point carries its year.
pub fn trajectory_plot(
    scores: &DMatrix<f64>,
    keys: &[CurveKey],
    step: i32,
    style: &PlotStyle,
    manifest: Option<&str>,
) -> Result<String> {
    if scores.ncols() < 2 {
        return Err(FcurveError::Dimension {
            expected: 2,
            got: scores.ncols(),
        });
    }
    check_aligned(keys.len(), scores.nrows())?;
    if step < 1 {
        return Err(FcurveError::Parameter("trajectory step must be positive".into()));
    }
    let first = keys.iter().map(|k| k.year).min().unwrap_or(0);
    let mut by_country: BTreeMap<&str, Vec<(i32, f64, f64)>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        if (k.year - first) % step == 0 {
            by_country
                .entry(&k.country)
                .or_default()
                .push((k.year, scores[(i, 0)], scores[(i, 1)]));
        }
    }
    for pts in by_country.values_mut() {
        pts.sort_by_key(|p| p.0);
    }
    let pts = || by_country.values().flatten();
    let frame = Frame {
        x: style
            .x_range
            .unwrap_or_else(|| padded_range(pts().map(|p| p.1).chain([0.0]), (-1.0, 1.0))),
        y: style
            .y_range
            .unwrap_or_else(|| padded_range(pts().map(|p| p.2).chain([0.0]), (-1.0, 1.0))),
        w: style.width,
        h: style.height,
    };
    let mut s = svg_open(style.width, style.height, manifest);
    frame.axes(&mut s, style);
    let (ox, oy) = (frame.px(0.0), frame.py(0.0));
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{oy:.2}" x2="{:.2}" y2="{oy:.2}" stroke="#888" stroke-dasharray="3,3"/><line x1="{ox:.2}" y1="{:.2}" x2="{ox:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="3,3"/>"##,
        frame.px(frame.x.0),
        frame.px(frame.x.1),
        frame.py(frame.y.1),
        frame.py(frame.y.0)
    );
    for (c, (country, points)) in by_country.iter().enumerate() {
        let color = PALETTE[c % PALETTE.len()];
        let coords: Vec<(f64, f64)> = points.iter().map(|p| (frame.px(p.1), frame.py(p.2))).collect();
        let path: Vec<String> = coords.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            r#"<g class="trajectory" data-country="{}"><polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            escape(country),
            path.join(" ")
        );
        for ((x, y), p) in coords.iter().zip(points) {
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="8">{}</text>"#,
                x + 3.0,
                y - 3.0,
                p.0
            );
        }
        if let Some((x, y)) = coords.last() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="{color}">{}</text>"#,
                x + 3.0,
                y + 10.0,
                escape(country)
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}
