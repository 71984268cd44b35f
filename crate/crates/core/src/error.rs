use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate lighting rig: {0}")]
    DegenerateRig(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("padding contract violated: {0}")]
    Padding(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("training diverged at epoch {epoch} (lr = {lr}): loss = {loss}")]
    Divergence { epoch: usize, lr: f64, loss: f64 },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("dataset validation failed: {0}")]
    Validation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
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

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller violating an input contract
    /// (bad shapes, arguments, formats) rather than by a runtime failure.
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::DegenerateRig(_)
                | Error::Argument(_)
                | Error::EmptyInput(_)
                | Error::Format(_)
                | Error::Padding(_)
                | Error::Validation(_)
                | Error::UndefinedMetric(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
