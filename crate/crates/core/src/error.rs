use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("R + B^T P B is not invertible")]
    SingularInnerSolve,

    #[error("closed loop A + BK fails the stability certificate")]
    UnstablePolicy,

    #[error("initial policy does not stabilize the system")]
    UnstableInitialPolicy,

    #[error("subspace is not invariant (residual {residual:e} > {tolerance:e})")]
    InvariantViolation { residual: f64, tolerance: f64 },

    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),

    #[error("second-moment estimator needs an isotropic x0 scale (sigma0 = 0)")]
    SigmaZeroUnknown,

    #[error("residualized target feature has zero empirical variance")]
    DegenerateResidual,

    #[error("sampled block stayed degenerate after {attempts} attempts")]
    DegenerateBlock { attempts: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Whether the failure is numerical (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NotPositiveDefinite { .. }
                | Error::MaxIterExceeded { .. }
                | Error::SingularInnerSolve
                | Error::UnstablePolicy
                | Error::UnstableInitialPolicy
                | Error::InvariantViolation { .. }
                | Error::DegenerateResidual
                | Error::DegenerateBlock { .. }
        )
    }
}
