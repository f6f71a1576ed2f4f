//! Whole mortality pipeline: life tables → panel → smoothing → FPCA and
//! clustering → artifacts with a run manifest.
//!
//! Uses the HMD files under `FCURVE_DATA_DIR` when they are all present;
//! otherwise writes stylized tables in the same layout to a scratch
//! directory and runs on those.
//!
//! cargo run --release --example hmd_pipeline -- [output-dir]

use std::path::{Path, PathBuf};

use fcurve::basis::KnotScheme;
use fcurve::cluster::Linkage;
use fcurve::flm::{FlmVariant, InitMethod};
use fcurve::ingest::{data_available, load_panel, table_path, CountryEntry, PanelConfig, Sex};
use fcurve::pipeline::{execute, prepare, replay};
use fcurve::report::{Analysis, RunConfig, RunManifest};
use fcurve::smooth::{default_lambda_grid, LambdaMode};
use fcurve::synthetic::{hmd_table_text, mortality_panel};
use fcurve::FcurveError;

fn synthetic_tables(dir: &Path, cfg: &PanelConfig) -> fcurve::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FcurveError::io(dir, e))?;
    let codes = cfg.codes();
    let refs: Vec<&str> = codes.iter().map(String::as_str).collect();
    for sex in [Sex::Male, Sex::Female] {
        let panel = mortality_panel(&refs, cfg.years, sex, 99)?;
        for code in &codes {
            let curves: Vec<_> = panel.curves().iter().filter(|c| &c.country == code).collect();
            let path = table_path(dir, code, sex);
            std::fs::write(&path, hmd_table_text(code, sex, &curves)).map_err(|e| FcurveError::io(&path, e))?;
        }
    }
    Ok(())
}

fn main() -> fcurve::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("fcurve-examples/hmd"), PathBuf::from);
    let real = std::env::var_os("FCURVE_DATA_DIR").map(PathBuf::from);
    let full = PanelConfig::default();
    let (data_dir, cfg) = match real {
        Some(d) if data_available(&d, &full) => (d, full),
        _ => {
            // a smaller stand-in panel keeps the demo quick
            let cfg = PanelConfig {
                countries: full.countries.iter().step_by(3).cloned().collect::<Vec<CountryEntry>>(),
                ..full
            };
            let dir = out.join("tables");
            synthetic_tables(&dir, &cfg)?;
            println!("no HMD data found; using stylized tables in {}", dir.display());
            (dir, cfg)
        }
    };

    std::fs::create_dir_all(&out).map_err(|e| FcurveError::io(&out, e))?;
    let panel_path = out.join("panel_male.csv");
    let panel = load_panel(&data_dir, &cfg, Sex::Male)?;
    panel.write_csv(&panel_path)?;
    println!("{} male curves, {} countries", panel.len(), panel.countries().len());

    let config = |analysis| RunConfig {
        panel: panel_path.to_string_lossy().into_owned(),
        sex: Some(Sex::Male),
        basis: fcurve::basis::BasisSpec {
            order: 4,
            knots: KnotScheme::NonUniform31.breakpoints(),
        },
        lambda_mode: LambdaMode::Common,
        lambda_grid: default_lambda_grid(),
        countries: cfg.countries.clone(),
        analysis,
    };
    let runs = [
        ("fpca", Analysis::Fpca { q: 6 }),
        ("distance", Analysis::Distance { k: 5, q: 4, linkage: Linkage::Ward }),
        (
            "flm",
            Analysis::Flm {
                k_range: (2..=5).collect(),
                variant: FlmVariant::AkjBQkDk,
                threshold: 0.2,
                init: InitMethod::KMeans,
                seeds: vec![1, 2],
                max_iter: 200,
                tol: 1e-6,
            },
        ),
    ];
    let mut last: Option<RunManifest> = None;
    for (name, analysis) in runs {
        let (manifest, ds) = prepare(config(analysis))?;
        let run = execute(manifest, &ds, &out.join(name))?;
        println!("{name}: {} artifacts, manifest {}", run.artifacts.len(), &run.manifest.hash[..12]);
        last = Some(run.manifest);
    }

    // any recorded run can be regenerated from its manifest alone
    if let Some(m) = last {
        let again = replay(&m, &out.join("flm-replay"))?;
        println!("replayed flm run: manifest {}", &again.manifest.hash[..12]);
    }
    Ok(())
}
