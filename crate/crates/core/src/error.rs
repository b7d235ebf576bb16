use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A drift or score was requested at a time where it has no finite value.
    #[error("singular time t = {t}: {what}")]
    SingularTime { t: f64, what: &'static str },

    /// Invalid schedule, grid, model or sampler configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A sampler produced a non-finite state.
    #[error("non-finite state at t = {t} ({stage})")]
    NonFinite { t: f64, stage: &'static str },

    /// A vector argument has the wrong length.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// An iterative solver failed to meet its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, BridgeError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(BridgeError::Dimension { expected, got })
    }
}
