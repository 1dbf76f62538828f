use std::path::PathBuf;

/// Errors produced anywhere in the reconstruction library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("point lies at or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },
    #[error("frame mismatch: map is in frame {map}, expected {expected}")]
    Frame { map: usize, expected: usize },
    #[error("empty surface: {0}")]
    EmptySurface(String),
    #[error("depth gauge is unanchored: {0}")]
    UnanchoredGauge(String),
    #[error("fusion failed: {0}")]
    FusionFailed(String),
    #[error("invalid initialization: {0}")]
    InvalidInitialization(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
