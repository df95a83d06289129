use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series for lambda={lambda}, nu={nu} did not converge within {max_terms} terms")]
    SeriesConvergence { lambda: f64, nu: f64, max_terms: usize },

    #[error("rate solve for mu={mu}, nu={nu} failed: {reason}")]
    SolveConvergence { mu: f64, nu: f64, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid target spec at `{path}`: {reason}")]
    InvalidSpec { path: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SeriesConvergence { .. } | Error::SolveConvergence { .. }
        )
    }
}
