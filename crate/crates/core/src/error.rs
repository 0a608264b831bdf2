use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is not balanced (relative residual {0:.3e})")]
    Unbalanced(f64),

    #[error("eigenvalue has merged into the continuous spectrum: a = {a} >= a* ~ 0.66")]
    EigenvalueMerged { a: f64 },

    #[error("eigensolver failed: {0}")]
    NoConvergence(String),

    #[error("solution blew up at t = {t} (last good time {last_good})")]
    BlowUp { t: f64, last_good: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("malformed checkpoint at byte {offset}: {reason}")]
    Checkpoint { offset: u64, reason: String },

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Unbalanced(_)
                | Error::EigenvalueMerged { .. }
                | Error::UnknownPreset(_)
                | Error::Json(_)
        )
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
