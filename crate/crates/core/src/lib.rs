//! Penalized likelihood inference for the bimodal Birnbaum–Saunders (BBS)
//! distribution.
//!
//! The crate covers the distribution functions of BBS and its GBS₂
//! competitor, plain and penalized log-likelihoods, BFGS fitting with
//! convergence classification, likelihood-ratio, score, Wald and signed
//! likelihood-ratio tests (asymptotic, bootstrap and higher-order corrected),
//! a bootstrap nonnested test for BBS versus GBS₂, and a seeded Monte Carlo
//! engine.

pub mod distributions;
pub mod error;
pub mod estimation;
pub mod hypothesis;
pub mod likelihood;
pub mod montecarlo;
pub mod nonnested;
pub mod normal;
pub mod optim;
pub mod quadrature;
pub mod stream;

pub use distributions::{BbsParams, Gbs2Params, Sample};
pub use error::{Error, Result};
