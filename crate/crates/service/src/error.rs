use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("campaign {0} not found")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("{message}")]
    Validation { message: String, field: Option<String> },

    #[error("{0}")]
    Numerical(String),

    #[error("storage: {0}")]
    Storage(String),
}

pub type ServiceResult<T> = Result<T, ServiceError>;

/// Error body of every failed API call.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub field: Option<String>,
}

impl ServiceError {
    pub fn validation(message: impl Into<String>) -> Self {
        ServiceError::Validation {
            message: message.into(),
            field: None,
        }
    }

    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError::Validation {
            message: message.into(),
            field: Some(field.into()),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Validation { .. } => "validation",
            ServiceError::Numerical(_) => "numerical",
            ServiceError::Storage(_) => "storage",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            field: match self {
                ServiceError::Validation { field, .. } => field.clone(),
                _ => None,
            },
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServiceError::Numerical(_) => 3,
            ServiceError::Storage(_) => 1,
            _ => 2,
        }
    }
}

impl From<icmse_core::Error> for ServiceError {
    fn from(e: icmse_core::Error) -> Self {
        if let icmse_core::Error::Io(io) = e {
            return ServiceError::Storage(io.to_string());
        }
        if e.is_validation() {
            ServiceError::validation(e.to_string())
        } else {
            ServiceError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Storage(format!("json: {e}"))
    }
}
