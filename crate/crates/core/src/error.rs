use rwlab_autodiff::AdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("triplet sampling needs at least two distinct labels among the originals")]
    InsufficientClasses,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty dataset: {0}")]
    Empty(&'static str),

    #[error("run diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("schema error in {file}: {detail}")]
    Schema { file: String, detail: String },

    #[error(transparent)]
    Autodiff(#[from] AdError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
