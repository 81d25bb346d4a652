use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("field is not mean-zero (mean {mean:.3e}, max |f| {scale:.3e})")]
    NotMeanZero { mean: f64, scale: f64 },

    #[error("spectral symbol vanishes at mode ({mx}, {my})")]
    SingularSymbol { mx: i64, my: i64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {what} `{name}`")]
    UnknownKind { what: &'static str, name: String },

    /// E1 = int g + C0 must stay positive; the suggestion makes the current field admissible.
    #[error(
        "E1 = {e1:.6e} <= 0 at step {step:?}; increase C0 (suggested C0 = {suggested_c0:.6e})"
    )]
    EnergyShiftTooSmall {
        e1: f64,
        suggested_c0: f64,
        step: Option<usize>,
    },

    #[error("near-singular Newton derivative W'(xi) = {derivative:.3e} at step {step:?}")]
    NewtonSingular {
        derivative: f64,
        step: Option<usize>,
    },

    #[error("singular scalar update (denominator {denominator:.3e}) at step {step:?}")]
    SingularScalar {
        denominator: f64,
        step: Option<usize>,
    },

    #[error("step ratio {gamma:.6} exceeds stability bound {bound:.6} at step {step}")]
    RatioViolation { gamma: f64, bound: f64, step: usize },

    #[error("non-finite field value after step {step}")]
    NonFinite { step: usize },

    #[error("no finite stability threshold for sigma = {sigma}")]
    UnboundedThreshold { sigma: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Numerical aborts as opposed to configuration or I/O problems.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotMeanZero { .. }
                | Error::SingularSymbol { .. }
                | Error::EnergyShiftTooSmall { .. }
                | Error::NewtonSingular { .. }
                | Error::SingularScalar { .. }
                | Error::RatioViolation { .. }
                | Error::NonFinite { .. }
                | Error::UnboundedThreshold { .. }
        )
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::EnergyShiftTooSmall {
                e1, suggested_c0, ..
            } => Error::EnergyShiftTooSmall {
                e1,
                suggested_c0,
                step: Some(step),
            },
            Error::NewtonSingular { derivative, .. } => Error::NewtonSingular {
                derivative,
                step: Some(step),
            },
            Error::SingularScalar { denominator, .. } => Error::SingularScalar {
                denominator,
                step: Some(step),
            },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
