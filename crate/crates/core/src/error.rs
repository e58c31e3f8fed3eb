//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed numeric input: non-finite entries, dimension mismatch,
    /// out-of-range argument.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A model parameter constraint is violated.
    #[error("constraint violated: {0}")]
    Constraint(String),

    /// A configured capacity limit (basis degree, portfolio size) is
    /// exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Evaluation outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// CDS premium leg is zero or negative; no spread is defined.
    #[error("degenerate annuity: premium leg value {0} is not positive")]
    DegenerateAnnuity(f64),

    /// Payoff support has collapsed to a point.
    #[error("degenerate support: b_min == b_max == {0}")]
    DegenerateSupport(f64),

    /// Every firm in the portfolio has already defaulted.
    #[error("empty portfolio: all firms defaulted")]
    EmptyPortfolio,

    /// No calibration start satisfied the parameter constraints.
    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
