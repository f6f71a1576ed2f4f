use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong between reading a life table and writing a plot.
#[derive(Debug, Error)]
pub enum FcurveError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("missing value for {country} {year} age {age}")]
    MissingValue { country: String, year: i32, age: u32 },

    #[error("panel coverage incomplete, missing: {}", .0.join(", "))]
    Coverage(Vec<String>),

    #[error("degenerate curve {0}: all values are zero")]
    DegenerateCurve(String),

    #[error("duplicate curve key {0}")]
    DuplicateKey(String),

    #[error("invalid knot vector: {0}")]
    Knots(String),

    #[error("point {t} outside basis domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("rank-deficient normal equations (lambda = {lambda})")]
    Rank { lambda: f64 },

    #[error("GCV undefined: df = {df} >= N = {n}")]
    UndefinedGcv { df: f64, n: usize },

    #[error("no grid value produced a defined GCV score")]
    Selection,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("component {component} collapsed at iteration {iteration} (prior {prior:e})")]
    DegenerateComponent {
        component: usize,
        iteration: usize,
        prior: f64,
    },

    #[error("log-likelihood decreased at iteration {iteration}: {previous} -> {current}")]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("all model fits failed: {}", .0.join("; "))]
    AllFitsFailed(Vec<String>),

    #[error("input {path} changed since the run was recorded (sha256 {expected} vs {got})")]
    InputChanged {
        path: String,
        expected: String,
        got: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FcurveError> = std::result::Result<T, E>;

impl FcurveError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FcurveError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end:
    /// 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use FcurveError::*;
        match self {
            Config(_) | Parameter(_) | Knots(_) | Json(_) => 2,
            Parse { .. }
            | Structure(_)
            | MissingValue { .. }
            | Coverage(_)
            | DegenerateCurve(_)
            | DuplicateKey(_)
            | Domain { .. }
            | Dimension { .. }
            | InsufficientData(_)
            | InputChanged { .. }
            | Io { .. } => 3,
            Rank { .. }
            | UndefinedGcv { .. }
            | Selection
            | Numeric(_)
            | DegenerateComponent { .. }
            | NonMonotone { .. }
            | AllFitsFailed(_) => 4,
        }
    }
}
