use thiserror::Error;

use crate::estimation::FitStatus;

/// Errors raised by the inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature did not converge: estimated error {error:.3e} after {subdivisions} subdivisions")]
    Quadrature { error: f64, subdivisions: usize },

    #[error("fit did not converge (unrestricted: {unrestricted:?}, restricted: {restricted:?})")]
    FitFailed {
        unrestricted: Option<FitStatus>,
        restricted: Option<FitStatus>,
    },

    #[error("too many failed bootstrap replicates: {failed} of {requested}")]
    BootstrapFailures { failed: usize, requested: usize },

    #[error("invalid test specification: {0}")]
    InvalidTest(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
