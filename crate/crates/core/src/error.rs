use thiserror::Error;

/// Errors raised by samplers, integrators and geometry routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point outside the kernel support: {0}")]
    Domain(String),

    #[error("rejection envelope failure: {context} (observed ratio {ratio:.6e}, envelope {envelope:.6e})")]
    EnvelopeFailure {
        context: String,
        ratio: f64,
        envelope: f64,
    },

    #[error(
        "numerical integration did not converge: {context} (residual estimate {residual:.3e})"
    )]
    NumericFailure { context: String, residual: f64 },

    #[error("trace exhausted before the threshold was crossed after {steps} steps")]
    NotCrossed { steps: usize },

    #[error("numerically inconsistent trace at step {step}: {detail}")]
    InconsistentTrace { step: usize, detail: String },

    #[error("cell certification failed after {extensions} region extensions")]
    CertificationFailure { extensions: u32 },

    #[error("top vertex (0, lambda) not found on the cell (closest at distance {distance:.3e})")]
    TopVertexNotFound { distance: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
