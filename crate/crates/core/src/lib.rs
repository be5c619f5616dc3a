//! Probabilistic forecasting with an error-correction mean, GARCH variances,
//! non-central t marginals and a (dynamic) t copula.

pub mod backtest;
pub mod copula;
pub mod data;
pub mod error;
pub mod estimation;
pub mod forecast;
pub mod likelihood;
pub mod marginal;
pub mod meanvol;
pub mod optim;
pub mod par;
pub mod quad;
pub mod scoring;
pub mod simulate;
pub mod spec;
pub mod special;
pub mod state;
pub mod stats;
pub mod transform;

#[cfg(test)]
mod testutil;

pub use error::{Error, ErrorKind, Result};
