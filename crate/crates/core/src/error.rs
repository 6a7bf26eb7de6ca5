use thiserror::Error;

/// Errors raised anywhere in the assimilation pipeline.
#[derive(Debug, Error)]
pub enum OmecError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("integration blew up at step {step}")]
    IntegrationBlowup { step: usize },
    #[error("filter diverged at step {step}")]
    FilterDivergence { step: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl OmecError {
    /// Process exit code used by the command line tool: 1 for bad
    /// configuration or input, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            OmecError::IntegrationBlowup { .. }
            | OmecError::FilterDivergence { .. }
            | OmecError::NumericalFailure(_)
            | OmecError::InvalidCovariance(_) => 2,
            _ => 1,
        }
    }

    /// Last step that completed before a divergence, if this error carries one.
    pub fn last_valid_step(&self) -> Option<usize> {
        match self {
            OmecError::IntegrationBlowup { step } | OmecError::FilterDivergence { step } => {
                step.checked_sub(1)
            }
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, OmecError>;
