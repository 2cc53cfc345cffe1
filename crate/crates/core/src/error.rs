use thiserror::Error;

/// Errors raised by the engine.
///
/// The variants line up with the exit codes of the command-line front end, so
/// callers can tell a refused price (arbitrage present) from an unhedgeable
/// claim or a blown-up path without string matching.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no solution: residual {residual:.3e} exceeds tolerance")]
    NoSolution { residual: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("model evaluation produced a non-finite value in {what} at t = {t}")]
    ModelEvaluation { what: String, t: f64 },

    #[error("path exploded at t = {time}")]
    Explosion { time: f64 },

    #[error("pricing refused: arbitrage residual |kappa| = {kappa_norm:.3e} at t = {time}")]
    PricingRefused { kappa_norm: f64, time: f64 },

    #[error("hedging infeasible: residual {residual:.3e} at t = {time}")]
    HedgingInfeasible { residual: f64, time: f64 },

    #[error("degenerate regression design: {0}")]
    DegenerateBasis(String),

    #[error("no incompleteness witness: the market is complete on the requested index set")]
    WitnessUnavailable,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
