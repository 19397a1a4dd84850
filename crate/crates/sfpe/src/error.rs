use thiserror::Error;

/// Crate-wide error type; variants carry enough context to print a
/// machine-readable record from the command line layer.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("diffusion matrix near-singular at step {step}: residual {residual:.3e} exceeds {threshold:.3e}")]
    IllConditionedSigma {
        step: usize,
        residual: f64,
        threshold: f64,
    },

    #[error("sweep failed: {0}")]
    FailedSweep(String),

    #[error("Picard iteration diverging: {0}")]
    DivergingIteration(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable tag for machine-readable error records and exit codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::IllConditionedSigma { .. } => "ill_conditioned_sigma",
            Error::FailedSweep(_) => "failed_sweep",
            Error::DivergingIteration(_) => "diverging_iteration",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::OutOfRange(_) => "out_of_range",
            Error::Io(_) => "io",
        }
    }
}
