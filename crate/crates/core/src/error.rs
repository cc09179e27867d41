//! Error type shared by all solver modules.

/// Errors surfaced by the numerical routines in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition (non-finite entries, bad shapes
    /// that are detectable locally, invalid parameters).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two arguments that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The data admits no meaningful answer (all points coincide, rank
    /// deficiency below what the operation requires, ...).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// An iterative routine failed to converge or produced non-finite values.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A metric is undefined for the given inputs (e.g. empty evaluation set).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// The starting point handed to an iterative solver is unusable.
    #[error("invalid start: {0}")]
    InvalidStart(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable category name, used by the CLI for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::DegenerateData(_) => "degenerate-data",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::InvalidStart(_) => "invalid-start",
        }
    }
}
