use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        /// Rough condition-number estimate of the offending matrix, when known.
        condition: Option<f64>,
    },

    #[error("degenerate truncation: orthant probability {prob:e} is below the representable range")]
    DegenerateTruncation { prob: f64 },

    #[error("model mode mismatch: {0}")]
    Mode(String),

    #[error("model fit failed: {message} (best log-likelihood {best_loglik})")]
    Fit { message: String, best_loglik: f64 },

    #[error("proposal failed: {0}")]
    Proposal(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            condition: None,
        }
    }

    /// True for failures caused by bad input rather than bad numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Argument(_) | Error::Parameter(_) | Error::Mode(_) | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
