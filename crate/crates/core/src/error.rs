use thiserror::Error;

/// Errors raised by the distribution, engine, fitting and study routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate truncation: truncated fraction {fraction} leaves no support above the threshold")]
    DegenerateTruncation { fraction: f64 },

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("accuracy target missed: {what} (estimated error {estimate:e}, tolerance {tolerance:e})")]
    Accuracy {
        what: String,
        estimate: f64,
        tolerance: f64,
    },

    #[error("no sign change found while bracketing the {level} quantile after {expansions} expansions")]
    BracketFailure { level: f64, expansions: usize },

    #[error("simulation would need {requested:e} severity draws, above the budget of {budget:e}")]
    DrawBudget { requested: f64, budget: f64 },

    #[error("level {level} not reached within {n_points} grid cells of width {step}")]
    Resolution { level: f64, n_points: usize, step: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("malformed data at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("information matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("posterior approximation unusable: {rejected} of {attempted} parameter draws rejected")]
    RejectionRate { rejected: u64, attempted: u64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short stable identifier, used where failures are recorded as data.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Domain(_) => "domain",
            Error::DegenerateTruncation { .. } => "degenerate_truncation",
            Error::Overflow(_) => "overflow",
            Error::Accuracy { .. } => "accuracy",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::DrawBudget { .. } => "draw_budget",
            Error::Resolution { .. } => "resolution",
            Error::DegenerateData(_) => "degenerate_data",
            Error::Data { .. } => "data",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::NotConverged(_) => "not_converged",
            Error::RejectionRate { .. } => "rejection_rate",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        Error::Data {
            row,
            message: e.to_string(),
        }
    }
}
