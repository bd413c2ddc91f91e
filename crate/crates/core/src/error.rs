use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty component selection")]
    EmptySelection,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid rho {0}: must be positive")]
    InvalidRho(f64),
    #[error("flow outputs need an RF frame and time")]
    MissingFrame,
    #[error("guidance mode {0} needs an auxiliary model")]
    MissingAuxiliary(&'static str),
    #[error("numerical divergence at step {step}")]
    NumericalDivergence { step: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model format: {0}")]
    Format(String),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
