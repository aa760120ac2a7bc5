use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is at or behind the camera plane (camera-space z = {z})")]
    BehindCamera { z: f64 },

    #[error("non-finite gradient in parameter block `{block}` at index {index}")]
    NonFiniteGradient { block: String, index: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("optimization diverged in {stage} at iteration {iteration}: {detail}")]
    Diverged {
        stage: &'static str,
        iteration: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("missing dataset file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("empty mask: no pixel participates in {0}")]
    EmptyMask(&'static str),

    #[error("no tracks survived chaining")]
    NoTracks,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss(_) | Error::Diverged { .. } => {
                ErrorKind::Numerical
            }
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}
