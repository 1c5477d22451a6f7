use thiserror::Error;

/// Errors produced by the toolkit.
///
/// The variants fall into three families that the CLI maps onto distinct
/// exit codes: invalid input data, numerical failure, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("model domain error: {0}")]
    Domain(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("underdetermined problem: {points} data points for {params} parameters")]
    Underdetermined { points: usize, params: usize },

    #[error("fit did not converge after {iterations} iterations (cost {cost:.6e}, damping {damping:.3e})")]
    NotConverged { iterations: usize, cost: f64, damping: f64 },

    #[error("singular normal equations: {0}")]
    Singular(String),

    #[error("no recovery profile for flux level {0:.6e} Hz")]
    MissingProfile(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::NotConverged { .. } | Error::Singular(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
