use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("training diverged in epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("power iteration did not converge after {iterations} iterations (best estimate {estimate})")]
    ConvergenceFailure { iterations: usize, estimate: f64 },

    #[error("gain norm at layer {layer}, frame {frame}: {source}")]
    GainNorm {
        layer: usize,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("adaptation diverged: {0}")]
    AdaptationDiverged(String),

    #[error("self-adaptation iteration {iteration}: {source}")]
    SelfAdapt {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for failures of the numerics (divergence, non-convergence),
    /// as opposed to bad inputs or IO.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::TrainingDiverged { .. }
            | Error::ConvergenceFailure { .. }
            | Error::AdaptationDiverged(_) => true,
            Error::GainNorm { source, .. } | Error::SelfAdapt { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }
}
