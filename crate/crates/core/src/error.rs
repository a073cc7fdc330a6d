use thiserror::Error;

/// Errors produced by the solvers, diagnostics and config loader.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A momentum (or gradient) left the box on which the numerical
    /// Hamiltonian was calibrated.
    #[error("out of validity range: {0}")]
    OutOfValidity(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("resolution rule violated: h = {h:.3e} > eps_min / 8 = {limit:.3e}")]
    Resolution { h: f64, limit: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("enumeration budget exceeded after {checked} candidates")]
    BudgetExceeded {
        checked: u64,
        partial: Box<crate::scales::ResonanceReport>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("property violation: {0}")]
    Property(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
