//! Subsampling MCMC.
//!
//! Log-likelihood estimators built on the survey-sampling difference
//! estimator with control variates, dependent subsample proposals, the
//! (signed) pseudo-marginal Metropolis-Hastings sampler with the
//! Block-Poisson estimator, Hamiltonian Monte Carlo with energy conserving
//! subsampling, and the chain diagnostics used for tuning.

pub mod control_variates;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod special;
pub mod summation;

pub use control_variates::{ControlVariates, TaylorOrder};
pub use error::{Error, Result};
pub use model::{Dataset, GaussianPrior, Model, ModelKind, Posterior, Theta};
pub use samplers::ChainTrace;
