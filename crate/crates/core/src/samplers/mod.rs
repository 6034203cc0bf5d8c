//! Markov chain kernels: Metropolis-Hastings, pseudo-marginal MH (including
//! the signed variant for the Block-Poisson estimator), Hamiltonian Monte
//! Carlo and HMC with energy conserving subsampling.
//!
//! Each chain draws from three independent streams (see [`crate::rng`]).
//! θ-proposals, momenta and accept uniforms come from the θ stream, so an
//! exact-likelihood PMMH or HMC-ECS run shares every θ-side draw with the
//! corresponding MH or HMC run.

mod hmc;
mod mh;
mod trace;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

pub use crate::estimators::propose_u;
pub use hmc::{
    hmc_ecs_run, hmc_run, hmc_run_potential, leapfrog, EcsConfig, EcsPotential, HmcConfig,
    Potential, DIVERGENCE_THRESHOLD,
};
pub use mh::{mh_run, pmmh_run, PmmhConfig, PmmhEstimator};
pub use trace::ChainTrace;

use crate::error::{Error, Result};
use crate::model::Theta;

/// Metropolis-Hastings decision in the log domain.
///
/// Always consumes exactly one uniform so that chains which share a stream
/// stay aligned whatever the outcome. A non-finite proposed value is
/// rejected.
pub fn accept(
    current_log_target: f64,
    proposed_log_target: f64,
    log_q_correction: f64,
    rng: &mut impl Rng,
) -> bool {
    let u: f64 = rng.random();
    let log_ratio = proposed_log_target - current_log_target + log_q_correction;
    if proposed_log_target.is_nan()
        || proposed_log_target == f64::NEG_INFINITY
        || log_ratio.is_nan()
    {
        return false;
    }
    u.ln() < log_ratio
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalKind {
    RandomWalk,
    /// θ′ ∼ N(center, κ²Ω) regardless of the current state.
    Independence {
        center: Theta,
    },
}

/// θ-proposal N(·, κ²Ω).
#[derive(Debug, Clone)]
pub struct ProposalConfig {
    pub kind: ProposalKind,
    pub step_scale: f64,
    shape: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ProposalConfig {
    pub fn new(kind: ProposalKind, step_scale: f64, shape: DMatrix<f64>) -> Result<Self> {
        if !(step_scale > 0.0) || !step_scale.is_finite() {
            return Err(Error::config(
                "proposal.kappa",
                format!("κ must be positive, got {step_scale}"),
            ));
        }
        if shape.nrows() != shape.ncols() || shape != shape.transpose() {
            return Err(Error::config(
                "proposal.shape",
                "Ω must be a symmetric square matrix",
            ));
        }
        if let ProposalKind::Independence { center } = &kind {
            if center.len() != shape.nrows() {
                return Err(Error::config(
                    "proposal.center",
                    "center dimension does not match Ω",
                ));
            }
        }
        let chol = shape
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("proposal.shape", "Ω must be positive definite"))?;
        Ok(Self {
            kind,
            step_scale,
            shape,
            chol,
        })
    }

    /// Random walk with κ = 2.38/√d and Ω = I.
    pub fn rwm_default(d: usize) -> Self {
        Self::rwm(d, default_step_scale(d))
    }

    pub fn rwm(d: usize, step_scale: f64) -> Self {
        Self::new(
            ProposalKind::RandomWalk,
            step_scale,
            DMatrix::identity(d, d),
        )
        .expect("identity shape")
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Draws θ′ and returns it with log q(θ|θ′) − log q(θ′|θ).
    pub fn propose(&self, theta: &Theta, rng: &mut impl Rng) -> (Theta, f64) {
        let d = self.dim();
        let z = Theta::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = self.chol.l() * z * self.step_scale;
        match &self.kind {
            ProposalKind::RandomWalk => (theta + step, 0.0),
            ProposalKind::Independence { center } => {
                let prop = center + step;
                let correction =
                    self.log_density_kernel(theta, center) - self.log_density_kernel(&prop, center);
                (prop, correction)
            }
        }
    }

    /// −½ (x − c)ᵀ (κ²Ω)⁻¹ (x − c), the x-dependent part of the density.
    fn log_density_kernel(&self, x: &Theta, center: &Theta) -> f64 {
        let w = self
            .chol
            .l()
            .solve_lower_triangular(&(x - center))
            .expect("Cholesky factor is invertible");
        -0.5 * w.norm_squared() / (self.step_scale * self.step_scale)
    }
}

pub fn default_step_scale(d: usize) -> f64 {
    2.38 / (d as f64).sqrt()
}

/// Σ_i ψ(θ_i) s_i / Σ_i s_i over the post-burn-in draws.
pub fn signed_expectation(
    trace: &ChainTrace,
    psi: impl Fn(&[f64]) -> f64,
    burn_in: usize,
) -> Result<f64> {
    let mut num = crate::summation::Neumaier::default();
    let mut den = 0i64;
    for i in burn_in.min(trace.len())..trace.len() {
        let s = trace.sign[i];
        num.add(s as f64 * psi(trace.draw(i)));
        den += s as i64;
    }
    if den <= 0 {
        return Err(Error::Undefined(format!(
            "sum of signs is {den}; the sign-weighted estimate is unusable"
        )));
    }
    Ok(num.total() / den as f64)
}
