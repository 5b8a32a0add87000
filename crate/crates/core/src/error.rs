use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid volume header: {0}")]
    Header(String),
    #[error("payload holds {actual} values but dims require {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("expected a {expected} volume, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("volumes are on different grids")]
    GridMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("first fundamental form is degenerate (pole)")]
    PoleDegenerate,
    #[error("point coincides with the surface origin")]
    PointAtOrigin,
    #[error("non-finite gradient during evolution")]
    NonFiniteGradient,
    #[error("unknown point id {0}")]
    UnknownPoint(u64),
    #[error("nothing to undo")]
    EmptyHistory,
    #[error("surface fit diverged: {0}")]
    FitDiverged(String),
    #[error("json: {0}")]
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
}
