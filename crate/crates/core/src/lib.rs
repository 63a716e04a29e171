//! Locally adaptive Bayesian binary regression.
//!
//! The regression probability is modelled as a covariate-gated mixture of
//! probit regressions, each with its own partial thin-plate spline surface and
//! smoothing parameter. The number of components is sampled by reversible-jump
//! MCMC using independence proposals built from fixed-dimension pilot chains.
//!
//! The crate is organised along the fitting pipeline:
//!
//! * [`basis`] builds the low-rank thin-plate design matrix,
//! * [`model`] holds the mixture, its priors and closed-form densities,
//! * [`sampler`] is the fixed-`r` data-augmented Gibbs sampler,
//! * [`rjmcmc`] runs pilots and the trans-dimensional chain,
//! * [`inference`] turns traces into probability surfaces and predictions,
//! * [`metrics`] and [`simgen`] support simulation studies.

pub mod archive;
pub mod basis;
pub mod config;
pub mod dist;
pub mod error;
pub mod fit;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod rjmcmc;
pub mod rng;
pub mod sampler;
pub mod simgen;
pub mod study;

#[cfg(feature = "cli")]
pub mod cli;

pub use basis::{BasisConfig, BasisExpansion, Dataset, Normalization};
pub use error::{Error, Result};
pub use model::{ComponentParams, FitData, MixtureParams, PriorConfig};
pub use rng::RngStream;
