use std::fmt;

use crate::spectral::ComplexSpectrum;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("QR iteration did not converge after {sweeps} sweeps")]
    NoConvergence {
        sweeps: usize,
        partial: Box<ComplexSpectrum>,
    },

    #[error("diagonal matrix is singular (entry {index} is zero)")]
    SingularDiagonal { index: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("state diverged at step {step}")]
    Divergence { step: usize },

    #[error("training diverged at iteration {iteration} (non-finite loss)")]
    TrainingDiverged { iteration: usize },

    #[error("gradient check failed: relative error {error:e} exceeds {limit:e}")]
    GradientMismatch { error: f64, limit: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Shape {
            op,
            detail: detail.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::Invalid(msg.to_string())
    }

    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::Divergence { .. }
                | Error::TrainingDiverged { .. }
                | Error::NonFinite(_)
                | Error::GradientMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
