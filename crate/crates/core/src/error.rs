use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unplaceable scene: could not place {requested} objects after {attempts} attempts (seed {seed})")]
    UnplaceableScene {
        seed: u64,
        requested: usize,
        attempts: usize,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("labels are not one-hot at batch {batch}, pixel ({row}, {col})")]
    NotOneHot { batch: usize, row: usize, col: usize },

    #[error("pairing mismatch: {scenes} scenes but {images} images")]
    PairingMismatch { scenes: usize, images: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate box {0:?}")]
    DegenerateBox([f64; 4]),

    #[error("non-finite loss at step {step}: L_diff={diff}, L_adv_gen={adv_gen}, L_Dis={dis}")]
    NonFiniteLoss {
        step: usize,
        diff: f64,
        adv_gen: f64,
        dis: f64,
    },

    #[error("unsupported format version {found} in {what} (expected {expected})")]
    FormatVersion {
        what: &'static str,
        found: String,
        expected: String,
    },

    #[error("missing stage `{stage}`: {reason}")]
    MissingStage { stage: &'static str, reason: String },

    #[error("run directory {0} is not empty (use --force to overwrite)")]
    RunDirNotEmpty(PathBuf),

    #[error("run directory {0} is locked by another process")]
    RunDirLocked(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
