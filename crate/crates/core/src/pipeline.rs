//! Panel CSV to artifacts: smoothing, one analysis, and the files it emits.
//! The command-line front end is a thin layer over these functions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::cluster::{hierarchical, semimetric_matrix, two_stage_with, Feature, KMeansConfig, Partition};
use crate::error::{FcurveError, Result};
use crate::flm::{cluster_effects, select_model, FlmConfig};
use crate::fpca::fpca;
use crate::ingest::CurvePanel;
use crate::report::{
    bic_table_csv, composition_grid, effect_series, partition_csv, plot_curves, scores_csv, sha256_hex,
    trajectory_plot, write_text, Analysis, FpcaReport, ModelReport, PlotStyle, RunConfig, RunManifest, Series,
    PALETTE,
};
use crate::smooth::{smooth_panel, FunctionalDataset};

/// Smoothed dataset together with the configuration and input it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub manifest: Option<String>,
    pub config: RunConfig,
    pub input_sha256: String,
    pub dataset: FunctionalDataset,
}

impl DatasetFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string(self)?)
    }

    pub fn read(path: &Path) -> Result<DatasetFile> {
        let text = std::fs::read_to_string(path).map_err(|e| FcurveError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Panel restricted to the configured sex, plus the hash of the file bytes.
/// With `expected` set, a different hash is reported before any parsing.
pub fn read_panel(config: &RunConfig, expected: Option<&str>) -> Result<(CurvePanel, String)> {
    let path = Path::new(&config.panel);
    let bytes = std::fs::read(path).map_err(|e| FcurveError::io(path, e))?;
    let sha = sha256_hex(&bytes);
    if let Some(want) = expected {
        if want != sha {
            return Err(FcurveError::InputChanged {
                path: config.panel.clone(),
                expected: want.to_string(),
                got: sha,
            });
        }
    }
    let text = String::from_utf8(bytes).map_err(|_| FcurveError::Parse {
        line: 0,
        message: "panel is not UTF-8".into(),
    })?;
    let mut panel = CurvePanel::from_csv(&text)?;
    if let Some(sex) = config.sex {
        panel = panel.for_sex(sex)?;
    }
    Ok((panel, sha))
}

pub fn smooth(config: &RunConfig, panel: &CurvePanel) -> Result<FunctionalDataset> {
    let basis = BSplineBasis::from_spec(&config.basis)?;
    smooth_panel(panel, &basis, config.lambda_mode, &config.lambda_grid)
}

/// Read and smooth the panel named by `config`.
pub fn prepare(config: RunConfig) -> Result<(RunManifest, FunctionalDataset)> {
    let (panel, sha) = read_panel(&config, None)?;
    let dataset = smooth(&config, &panel)?;
    Ok((RunManifest::new(config, sha), dataset))
}

/// Files written by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub artifacts: Vec<PathBuf>,
}

struct Sink<'a> {
    dir: &'a Path,
    hash: String,
    written: Vec<PathBuf>,
}

impl Sink<'_> {
    fn put(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        write_text(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    fn tag(&self) -> Option<&str> {
        Some(&self.hash)
    }
}

fn single_sex(dataset: &FunctionalDataset) -> bool {
    dataset.keys.windows(2).all(|w| w[0].sex == w[1].sex)
}

fn cluster_plot(dataset: &FunctionalDataset, partition: &Partition, title: &str, tag: Option<&str>) -> Result<String> {
    let basis = &dataset.basis;
    let grid = &dataset.grid;
    let mut series = Vec::new();
    for (i, &a) in partition.assignments.iter().enumerate() {
        let row: Vec<f64> = dataset.row(i).iter().cloned().collect();
        series.push(Series::from_coefficients(basis, &row, grid)?.color(PALETTE[a % PALETTE.len()]).width(0.3));
    }
    let shares = partition.shares();
    for c in 0..partition.k {
        let members: Vec<usize> = (0..partition.n()).filter(|&i| partition.assignments[i] == c).collect();
        let mut mean = vec![0.0; dataset.p()];
        for &i in &members {
            for (m, v) in mean.iter_mut().zip(dataset.coefficients.row(i).iter()) {
                *m += v / members.len() as f64;
            }
        }
        series.push(
            Series::from_coefficients(basis, &mean, grid)?
                .label(&format!("cluster {} ({:.2}%)", c + 1, shares[c]))
                .color(PALETTE[c % PALETTE.len()])
                .width(2.5),
        );
    }
    Ok(plot_curves(&series, &PlotStyle::titled(title), tag))
}

fn partition_artifacts(sink: &mut Sink, config: &RunConfig, dataset: &FunctionalDataset, partition: &Partition, title: &str) -> Result<()> {
    sink.put("partition.csv", &partition_csv(&dataset.keys, partition, sink.tag())?)?;
    sink.put("cluster_means.svg", &cluster_plot(dataset, partition, title, sink.tag())?)?;
    if single_sex(dataset) {
        let grid = composition_grid(partition, &dataset.keys, &config.countries)?;
        sink.put("composition.csv", &grid.to_csv(sink.tag()))?;
        sink.put("composition.svg", &grid.to_svg(sink.tag()))?;
    }
    Ok(())
}

/// Run the configured analysis on `dataset` and write its artifacts, plus
/// `manifest.json`, into `out_dir`.
pub fn execute(mut manifest: RunManifest, dataset: &FunctionalDataset, out_dir: &Path) -> Result<RunOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| FcurveError::io(out_dir, e))?;
    let mut sink = Sink {
        dir: out_dir,
        hash: manifest.hash.clone(),
        written: Vec::new(),
    };
    let config = manifest.config.clone();
    match &config.analysis {
        Analysis::Smooth => {
            let file = DatasetFile {
                manifest: Some(manifest.hash.clone()),
                config: config.clone(),
                input_sha256: manifest.input_sha256.clone(),
                dataset: dataset.clone(),
            };
            let path = out_dir.join("dataset.json");
            file.write(&path)?;
            sink.written.push(path);
        }
        Analysis::Fpca { q } => {
            let res = fpca(dataset)?;
            let scores = res.scores(*q)?;
            sink.put("fpca.json", &FpcaReport::new(&res, sink.tag()).to_json())?;
            sink.put("scores.csv", &scores_csv(&dataset.keys, &scores, sink.tag())?)?;
            for l in 0..(*q).min(6) {
                let (plus, minus) = res.harmonic_effect(l, 2.0)?;
                let series = effect_series(
                    &dataset.basis,
                    plus.as_slice(),
                    minus.as_slice(),
                    res.mean_coeffs.as_slice(),
                    &dataset.grid,
                )?;
                let title = format!("component {} ({:.2}%)", l + 1, 100.0 * res.varprop[l]);
                sink.put(&format!("harmonic_{}.svg", l + 1), &plot_curves(&series, &PlotStyle::titled(&title), sink.tag()))?;
            }
            let style = PlotStyle {
                x_label: "score 1".into(),
                y_label: "score 2".into(),
                ..PlotStyle::titled("score trajectories")
            };
            let svg = trajectory_plot(&res.scores(2)?, &dataset.keys, 10, &style, sink.tag())?;
            sink.put("trajectories.svg", &svg)?;
        }
        Analysis::TwoStage { k, q, seed, restarts } => {
            let feature = q.map_or(Feature::Coefficients, Feature::FpcaScores);
            let km = KMeansConfig {
                restarts: *restarts,
                ..KMeansConfig::default()
            };
            let part = two_stage_with(dataset, feature, *k, *seed, &km)?;
            partition_artifacts(&mut sink, &config, dataset, &part, &format!("two-stage, K = {k}"))?;
        }
        Analysis::Distance { k, q, linkage } => {
            let res = fpca(dataset)?;
            let part = hierarchical(&semimetric_matrix(&res, *q)?, *linkage, *k)?;
            partition_artifacts(&mut sink, &config, dataset, &part, &format!("distance-based, K = {k}"))?;
        }
        Analysis::Flm {
            k_range,
            variant,
            threshold,
            init,
            seeds,
            max_iter,
            tol,
        } => {
            let base = FlmConfig {
                variant: *variant,
                scree_threshold: *threshold,
                init: *init,
                max_iter: *max_iter,
                tol: *tol,
                ..FlmConfig::default()
            };
            let sel = select_model(dataset, k_range, &[*variant], seeds, &base)?;
            let report = ModelReport::new(&sel.best, sink.tag());
            sink.put("model.json", &report.to_json())?;
            sink.put("model.txt", &report.table())?;
            sink.put("bic_table.csv", &bic_table_csv(&sel.scores, sink.tag()))?;
            if !sel.failures.is_empty() {
                sink.put("failures.txt", &(sel.failures.join("\n") + "\n"))?;
            }
            let part = sel.best.partition();
            let title = format!("model-based, K = {}", sel.best.k());
            partition_artifacts(&mut sink, &config, dataset, &part, &title)?;
            for k in 0..sel.best.k() {
                let (plus, minus, mean) = cluster_effects(&sel.best, k, 0, 2.0)?;
                let series = effect_series(&dataset.basis, plus.as_slice(), minus.as_slice(), mean.as_slice(), &dataset.grid)?;
                let title = format!("cluster {}, first subspace direction", k + 1);
                sink.put(&format!("effects_cluster_{}.svg", k + 1), &plot_curves(&series, &PlotStyle::titled(&title), sink.tag()))?;
            }
        }
    }
    manifest.finish();
    sink.put("manifest.json", &manifest.to_json())?;
    Ok(RunOutput {
        manifest,
        artifacts: sink.written,
    })
}

/// Re-run a recorded manifest from its panel, refusing if the panel changed.
pub fn replay(manifest: &RunManifest, out_dir: &Path) -> Result<RunOutput> {
    let (panel, sha) = read_panel(&manifest.config, Some(&manifest.input_sha256))?;
    let dataset = smooth(&manifest.config, &panel)?;
    let fresh = RunManifest {
        started_unix: RunManifest::new(manifest.config.clone(), sha).started_unix,
        finished_unix: None,
        ..manifest.clone()
    };
    execute(fresh, &dataset, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::KnotScheme;
    use crate::cluster::Linkage;
    use crate::ingest::{PanelConfig, Sex};
    use crate::smooth::{log_grid, LambdaMode};
    use crate::synthetic::mortality_panel;

    fn setup(dir: &Path, analysis: Analysis) -> RunConfig {
        let panel = mortality_panel(&["DNK", "SWE", "RUS", "JPN"], (1960, 1979), Sex::Male, 4).unwrap();
        let path = dir.join("panel.csv");
        panel.write_csv(&path).unwrap();
        RunConfig {
            panel: path.to_string_lossy().into_owned(),
            sex: Some(Sex::Male),
            basis: crate::basis::BasisSpec {
                order: 4,
                knots: KnotScheme::NonUniform31.breakpoints(),
            },
            lambda_mode: LambdaMode::Common,
            lambda_grid: log_grid(1e-4, 1e1, 6),
            countries: PanelConfig::default().countries,
            analysis,
        }
    }

    #[test]
    fn distance_run_writes_tagged_artifacts_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let config = setup(dir.path(), Analysis::Distance { k: 3, q: 4, linkage: Linkage::Ward });
        let (manifest, ds) = prepare(config).unwrap();
        let out = execute(manifest, &ds, &dir.path().join("run")).unwrap();
        let names: Vec<String> = out
            .artifacts
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        for n in ["partition.csv", "cluster_means.svg", "composition.csv", "composition.svg", "manifest.json"] {
            assert!(names.contains(&n.to_string()), "{n}");
        }
        let hash = &out.manifest.hash;
        for p in &out.artifacts {
            let text = std::fs::read_to_string(p).unwrap();
            assert!(text.contains(hash.as_str()), "{}", p.display());
        }
        let again = replay(&RunManifest::read(&dir.path().join("run/manifest.json")).unwrap(), &dir.path().join("again")).unwrap();
        assert_eq!(again.manifest.hash, *hash);
        for n in ["partition.csv", "cluster_means.svg", "composition.csv"] {
            assert_eq!(
                std::fs::read(dir.path().join("run").join(n)).unwrap(),
                std::fs::read(dir.path().join("again").join(n)).unwrap()
            );
        }
    }

    #[test]
    fn replay_detects_changed_panel() {
        let dir = tempfile::tempdir().unwrap();
        let config = setup(dir.path(), Analysis::Fpca { q: 3 });
        let (manifest, ds) = prepare(config.clone()).unwrap();
        execute(manifest.clone(), &ds, &dir.path().join("run")).unwrap();
        let mut text = std::fs::read_to_string(&config.panel).unwrap();
        text.push_str("1960\n");
        std::fs::write(&config.panel, text).unwrap();
        assert!(matches!(
            replay(&manifest, &dir.path().join("again")),
            Err(FcurveError::InputChanged { .. })
        ));
    }

    #[test]
    fn smooth_run_stores_dataset_with_config() {
        let dir = tempfile::tempdir().unwrap();
        let config = setup(dir.path(), Analysis::Smooth);
        let (manifest, ds) = prepare(config.clone()).unwrap();
        execute(manifest, &ds, dir.path()).unwrap();
        let file = DatasetFile::read(&dir.path().join("dataset.json")).unwrap();
        assert_eq!(file.config, config);
        assert_eq!(file.dataset, ds);
    }
}
