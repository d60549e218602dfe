use thiserror::Error;

/// Errors produced by the spectral kernels, samplers and steppers.
#[derive(Debug, Error)]
pub enum SchError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("mode index {index:?} out of range for n = {n}")]
    ModeOutOfRange { index: Vec<usize>, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("numerical blow-up at step {step} (t = {t})")]
    BlowUp { step: usize, t: f64 },
    #[error("no interface: field has no sign change")]
    NoInterface,
    #[error("eigensolver did not converge after {iterations} iterations (last value {last})")]
    NoConvergence { iterations: usize, last: f64 },
    #[error("interface too close to the domain boundary or to another component: {0}")]
    InvalidInterface(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
}

pub type Result<T> = std::result::Result<T, SchError>;
