use thiserror::Error;

/// Errors raised by the simulator and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right} modes per axis")]
    GridMismatch { left: usize, right: usize },

    #[error("field carries energy outside the dealias mask ({0:.3e})")]
    NotBandLimited(f64),

    #[error("noise decay exponent beta = {0} must exceed 11/8 so that G is Hilbert-Schmidt into H^(5/4) uniformly in the truncation")]
    NoiseTooRough(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical abort at t = {t}: {what}")]
    NumericalAbort { t: f64, what: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("control infeasible: mode {index} has zero noise amplitude but residual {residual:.3e}")]
    Infeasible { index: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
