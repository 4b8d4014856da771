//! Bayesian detection of periodic gene expression with a latent factor
//! model linking rhythmic coefficients across probes.

pub mod archive;
pub mod baselines;
pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod priors;
pub mod random;
pub mod sampler;
pub mod summaries;
pub mod synth;

pub use error::{Error, Result};
