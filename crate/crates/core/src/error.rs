use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigendecomposition did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} outside 1..={max}")]
    InvalidTimestep { t: usize, max: usize },

    #[error("depth value {0} outside [0, 1]")]
    InvalidDepth(f64),

    #[error("invalid stage: {0}")]
    InvalidStage(String),

    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("incompatible statistics: {0}")]
    IncompatibleStats(String),

    #[error("need at least two frames, got {0}")]
    InsufficientFrames(usize),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: u64, loss: f64 },

    #[error("missing state: {0}")]
    MissingState(String),

    #[error("stage prerequisite not met: {0}")]
    StagePrerequisite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
