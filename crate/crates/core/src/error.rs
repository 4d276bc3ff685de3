use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("condensed model needs {required} bytes, memory cap is {cap} bytes")]
    Capacity { required: usize, cap: usize },

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("model corrupt: {0}")]
    ModelCorrupt(String),

    #[error("online learning diverged: {0}")]
    LearningDiverged(String),

    /// Training loss became non-finite. `losses` holds the per-epoch mean
    /// losses of the epochs that completed before the failure.
    #[error("training diverged in epoch {epoch}")]
    TrainingDiverged { epoch: usize, losses: Vec<f64> },

    /// A failure inside a closed-loop run, tagged with the step it hit.
    #[error("step {step}: {source}")]
    Step { step: usize, source: Box<Error> },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        if let Error::Step { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::LearningDiverged(_)
                | Error::TrainingDiverged { .. }
        )
    }

    /// True for failures caused by files or their contents.
    pub fn is_data(&self) -> bool {
        if let Error::Step { source, .. } = self {
            return source.is_data();
        }
        matches!(
            self,
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::ModelCorrupt(_)
        )
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}
