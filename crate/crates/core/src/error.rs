use thiserror::Error;

#[derive(Debug, Error)]
pub enum MagflowError {
    #[error("point outside the model domain: {0}")]
    Domain(String),

    #[error("path resolution too coarse: {0}")]
    Resolution(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid minimax family: {0}")]
    InvalidFamily(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl MagflowError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MagflowError::Config(_) | MagflowError::Expression(_) | MagflowError::Toml(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, MagflowError>;
