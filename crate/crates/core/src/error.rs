use std::io;

use thiserror::Error;

/// Errors produced by the clustering pipeline.
#[derive(Debug, Error)]
pub enum DtcError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cluster {0} has zero total assignment mass")]
    DegenerateCluster(usize),

    #[error("infinite divergence: p({cluster}|{row}) = 0 where the target is positive")]
    InfiniteDivergence { row: usize, cluster: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("constraint error: {0}")]
    Constraint(String),

    #[error("index undefined: {0}")]
    UndefinedIndex(String),

    #[error("undefined state: {0}")]
    UndefinedState(String),

    #[error("format error: {0}")]
    Format(String),
}

impl DtcError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DtcError::Parameter(msg.into())
    }

    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DtcError::DegenerateCluster(_)
                | DtcError::InfiniteDivergence { .. }
                | DtcError::Training { .. }
        )
    }
}

pub type Result<T, E = DtcError> = std::result::Result<T, E>;
