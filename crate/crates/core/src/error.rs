use thiserror::Error;

/// Errors raised by the channel, correction, dynamics and trainer layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{name} = {value} is not a probability in [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    /// The corruption channel cannot be inverted: `rho_plus + rho_minus >= 1`.
    #[error("channel not invertible: rho_plus + rho_minus = {sum} >= 1")]
    Inversion { sum: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("degenerate divisor: {0}")]
    DegenerateDivisor(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fixed-point search did not converge after {iterations} iterations (last = {last}, residual = {residual:e})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        residual: f64,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::InvalidProbability { name, value })
    }
}
