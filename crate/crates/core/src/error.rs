use thiserror::Error;

/// Errors raised by the solvers, the model layer and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {field}: expected {expected}, got {got}")]
    Dimension {
        field: &'static str,
        expected: String,
        got: String,
    },

    #[error("numerical degeneracy at x = {x:?}: {detail}")]
    Degenerate { x: Vec<f64>, detail: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e} at x = {worst:?})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        worst: Vec<f64>,
    },

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("domain too small: {detail} (at x = {at:?})")]
    DomainTooSmall { detail: String, at: Vec<f64> },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular linear system (pivot {pivot})")]
    Singular { pivot: usize },

    #[error("chi curve is not certified convex: {0}")]
    NotCertified(String),

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("path {path} produced a non-finite value at step {step}")]
    NonFinitePath { path: usize, step: usize },

    #[error("solver failed at gamma = {gamma}: {source}")]
    AtGamma {
        gamma: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the user's input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::InvalidInput(_) | Error::Json(_) => {
                true
            }
            Error::AtGamma { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
