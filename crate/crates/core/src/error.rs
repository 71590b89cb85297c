use thiserror::Error;

use crate::samplers::remote::RemoteError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("problem too large for exact enumeration: {n_vars} variables (max {max})")]
    TooLarge { n_vars: usize, max: usize },

    #[error("sampler failed at iteration {iteration}: {source}")]
    SamplerAt {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("auxiliary variables diverged at iteration {iteration} (|v| = {magnitude:e})")]
    Diverged { iteration: usize, magnitude: f64 },

    #[error("instance {instance}: {source}")]
    Instance {
        instance: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("method {method:?}, instance {instance}: {source}")]
    Method {
        method: String,
        instance: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Remote(#[from] RemoteError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Self::dims(context, expected, found))
        }
    }
}
