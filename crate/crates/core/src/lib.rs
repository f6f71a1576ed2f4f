pub mod basis;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod smooth;

pub use error::{FcurveError, Result};
pub mod cluster;
pub mod fpca;
pub mod flm;
pub mod synthetic;
pub mod report;
pub mod pipeline;
