use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside segment [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate attitude: {0}")]
    DegenerateAttitude(String),

    #[error("degenerate thrust: |u| = {norm:e} below {min:e}")]
    DegenerateThrust { norm: f64, min: f64 },

    #[error("newton solve did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular input jacobian (condition number {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("singular least-squares system: {0}")]
    SingularSystem(String),

    #[error("invalid log: {0}")]
    InvalidLog(String),

    #[error("model format error at line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("simulation aborted at step {step}: {source}")]
    SimAbort {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
