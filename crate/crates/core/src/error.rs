use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type. `class()` yields a short stable identifier used by
/// the CLI for machine-parsable failure lines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite parameters detected in group `{0}`")]
    NonFiniteParams(String),

    #[error("non-finite gradient detected in group `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at iteration {iteration}: total loss is not finite")]
    Diverged { iteration: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported raster: {0}; pre-convert required")]
    UnsupportedRaster(String),

    #[error("CRS mismatch: {0}")]
    CrsMismatch(String),

    #[error("latitude {0} outside Web Mercator bounds")]
    LatitudeOutOfRange(f64),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Stable error class for single-line CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidCamera(_) => "invalid-camera",
            Error::InvalidConfig(_) => "invalid-config",
            Error::NonFiniteParams(_) => "non-finite-params",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::Diverged { .. } => "diverged",
            Error::Degenerate(_) => "degenerate-input",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::UnsupportedRaster(_) => "unsupported-raster",
            Error::CrsMismatch(_) => "crs-mismatch",
            Error::LatitudeOutOfRange(_) => "latitude-out-of-range",
            Error::Parse { .. } => "parse-error",
            Error::Checkpoint(_) => "checkpoint-error",
            Error::Manifest(_) => "manifest-error",
            Error::Io { .. } => "io-error",
            Error::Image { .. } => "image-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
