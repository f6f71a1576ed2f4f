use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fcurve::basis::{BasisSpec, KnotScheme};
use fcurve::cluster::Linkage;
use fcurve::flm::{FlmVariant, InitMethod};
use fcurve::ingest::{load_panel, PanelConfig, Sex};
use fcurve::pipeline::{execute, prepare, replay, DatasetFile};
use fcurve::report::{Analysis, RunConfig, RunManifest};
use fcurve::smooth::{log_grid, LambdaMode};
use fcurve::{FcurveError, Result};

#[derive(Parser)]
#[command(name = "fcurve", version, about = "Smoothing, FPCA and clustering of curve panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SexArg {
    Male,
    Female,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterMethod {
    Twostage,
    Distance,
}

#[derive(Subcommand)]
enum Command {
    /// Build a panel CSV from HMD 1x1 period life tables.
    Ingest {
        /// HMD directory; falls back to FCURVE_DATA_DIR.
        #[arg(long, env = "FCURVE_DATA_DIR")]
        data_dir: PathBuf,
        /// Country/area table as JSON; the 32-country default otherwise.
        #[arg(long)]
        countries: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        sex: SexArg,
        #[arg(long)]
        output: PathBuf,
    },
    /// Smooth a panel onto a B-spline basis with GCV-selected lambda.
    Smooth {
        /// `nonuniform31`, `uniform111`, or a JSON basis spec file.
        #[arg(long, default_value = "nonuniform31")]
        basis: String,
        #[arg(long, default_value = "common")]
        mode: String,
        /// `lo:hi:n` log-spaced, or a comma-separated list.
        #[arg(long, default_value = "1e-6:1e2:33")]
        lambda_grid: String,
        #[arg(long)]
        sex: Option<String>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Functional PCA of a smoothed dataset.
    Fpca {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 6)]
        q: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage (k-means) or distance-based (hierarchical) clustering.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: ClusterMethod,
        #[arg(long = "K")]
        k: usize,
        /// FPCA components; two-stage clusters coefficients when omitted.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, default_value = "ward")]
        linkage: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long)]
        countries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Model-based clustering with BIC selection over K and seeds.
    Flm {
        #[arg(long)]
        input: PathBuf,
        /// `lo..hi`, a single K, or a comma-separated list.
        #[arg(long = "K", default_value = "2..9")]
        k: String,
        #[arg(long, default_value = "akj-b-qk-dk")]
        variant: String,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
        #[arg(long, default_value = "kmeans")]
        init: String,
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        countries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a recorded manifest and regenerate every artifact.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_err(msg: impl Into<String>) -> FcurveError {
    FcurveError::Config(msg.into())
}

fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| FcurveError::io(path, e))
}

fn panel_config(path: Option<&Path>) -> Result<PanelConfig> {
    match path {
        Some(p) => PanelConfig::from_json(&read_string(p)?),
        None => Ok(PanelConfig::default()),
    }
}

fn parse_basis(arg: &str) -> Result<BasisSpec> {
    let scheme = match arg.to_ascii_lowercase().as_str() {
        "nonuniform31" | "non-uniform-31" => KnotScheme::NonUniform31,
        "uniform111" | "uniform-111" => KnotScheme::Uniform111,
        _ => return BasisSpec::from_json(&read_string(Path::new(arg))?),
    };
    Ok(BasisSpec {
        order: 4,
        knots: scheme.breakpoints(),
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| config_err(format!("bad {what} '{v}'"))))
        .collect()
}

fn parse_lambda_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [lo, hi, n] => {
            let lo: f64 = lo.parse().map_err(|_| config_err("bad grid lower bound"))?;
            let hi: f64 = hi.parse().map_err(|_| config_err("bad grid upper bound"))?;
            let n: usize = n.parse().map_err(|_| config_err("bad grid size"))?;
            if !(lo > 0.0 && hi >= lo && n >= 1) {
                return Err(config_err("lambda grid needs 0 < lo <= hi and n >= 1"));
            }
            Ok(log_grid(lo, hi, n))
        }
        [_] => parse_list(s, "lambda"),
        _ => Err(config_err(format!("bad lambda grid '{s}'"))),
    }
}

fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| config_err("bad K range"))?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| config_err("bad K range"))?;
        if lo == 0 || hi < lo {
            return Err(config_err(format!("empty K range '{s}'")));
        }
        return Ok((lo..=hi).collect());
    }
    parse_list(s, "K")
}

fn analyse(input: &Path, analysis: Analysis, countries: Option<&Path>, out: &Path) -> Result<()> {
    let file = DatasetFile::read(input)?;
    let mut config = file.config;
    config.analysis = analysis;
    if countries.is_some() {
        config.countries = panel_config(countries)?.countries;
    }
    let manifest = RunManifest::new(config, file.input_sha256);
    let run = execute(manifest, &file.dataset, out)?;
    for p in &run.artifacts {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            data_dir,
            countries,
            sex,
            output,
        } => {
            let cfg = panel_config(countries.as_deref())?;
            let panel = match sex {
                SexArg::Male => load_panel(&data_dir, &cfg, Sex::Male)?,
                SexArg::Female => load_panel(&data_dir, &cfg, Sex::Female)?,
                SexArg::Both => load_panel(&data_dir, &cfg, Sex::Male)?.merge(load_panel(&data_dir, &cfg, Sex::Female)?)?,
            };
            panel.write_csv(&output)?;
            println!("{} curves -> {}", panel.len(), output.display());
        }
        Command::Smooth {
            basis,
            mode,
            lambda_grid,
            sex,
            input,
            output,
        } => {
            let panel = std::fs::canonicalize(&input).map_err(|e| FcurveError::io(&input, e))?;
            let config = RunConfig {
                panel: panel.to_string_lossy().into_owned(),
                sex: sex.map(|s| s.parse::<Sex>()).transpose().map_err(|_| config_err("bad --sex"))?,
                basis: parse_basis(&basis)?,
                lambda_mode: mode.parse::<LambdaMode>()?,
                lambda_grid: parse_lambda_grid(&lambda_grid)?,
                countries: PanelConfig::default().countries,
                analysis: Analysis::Smooth,
            };
            let (manifest, dataset) = prepare(config)?;
            let file = DatasetFile {
                manifest: Some(manifest.hash.clone()),
                config: manifest.config.clone(),
                input_sha256: manifest.input_sha256.clone(),
                dataset,
            };
            file.write(&output)?;
            let lambdas = &file.dataset.lambdas;
            println!(
                "{} curves, p = {}, lambda in [{}, {}] -> {}",
                file.dataset.n(),
                file.dataset.p(),
                lambdas.iter().cloned().fold(f64::INFINITY, f64::min),
                lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                output.display()
            );
        }
        Command::Fpca { input, q, out } => analyse(&input, Analysis::Fpca { q }, None, &out)?,
        Command::Cluster {
            input,
            method,
            k,
            q,
            linkage,
            seed,
            restarts,
            countries,
            out,
        } => {
            let analysis = match method {
                ClusterMethod::Twostage => Analysis::TwoStage { k, q, seed, restarts },
                ClusterMethod::Distance => Analysis::Distance {
                    k,
                    q: q.ok_or_else(|| config_err("distance-based clustering needs --q"))?,
                    linkage: linkage.parse::<Linkage>()?,
                },
            };
            analyse(&input, analysis, countries.as_deref(), &out)?;
        }
        Command::Flm {
            input,
            k,
            variant,
            threshold,
            init,
            seeds,
            max_iter,
            tol,
            countries,
            out,
        } => {
            let init = match init.as_str() {
                "kmeans" | "k-means" => InitMethod::KMeans,
                "random" => InitMethod::Random,
                other => return Err(config_err(format!("unknown init '{other}'"))),
            };
            let analysis = Analysis::Flm {
                k_range: parse_k_range(&k)?,
                variant: variant.parse::<FlmVariant>()?,
                threshold,
                init,
                seeds: parse_list(&seeds, "seed")?,
                max_iter,
                tol,
            };
            analyse(&input, analysis, countries.as_deref(), &out)?;
        }
        Command::Report { run, out } => {
            let manifest = RunManifest::read(&run)?;
            let output = replay(&manifest, &out)?;
            for p in &output.artifacts {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fcurve: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

