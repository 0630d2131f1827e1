use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A NaN or infinity appeared in a forward pass, backward pass or update.
    #[error("non-finite value{}: {what}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { step: Option<usize>, what: String },

    #[error("no feasible matching avoids the forbidden cells")]
    NoFeasibleMatching,

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("multi-label margin loss needs at least one positive label")]
    NoPositiveLabel,

    #[error("invalid bounding box [{0}, {1}, {2}, {3}]")]
    InvalidBox(f64, f64, f64, f64),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite {
            step: None,
            what: what.into(),
        }
    }

    /// Attach the optimizer step at which a numeric failure happened.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::NonFinite { what, .. } => Error::NonFinite {
                step: Some(step),
                what,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
