use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("{what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("invalid parameter `{field}`: {detail}")]
    InvalidParam { field: &'static str, detail: String },

    #[error("stationary solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: u64, residual: f64 },

    #[error("{0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { what, detail: detail.into() }
    }

    pub(crate) fn param(field: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidParam { field, detail: detail.into() }
    }
}
