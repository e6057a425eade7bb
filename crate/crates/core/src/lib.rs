//! Knowledge-distillation lab: teachers trained to maximize log-likelihood
//! plus conditional mutual information (MCMI), evaluated on synthetic
//! Gaussian mixtures whose Bayes posterior is known exactly.

pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod seeds;
pub mod simplex;
pub mod train;

pub use error::{Error, Result};
