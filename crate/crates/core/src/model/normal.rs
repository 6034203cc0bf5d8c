//! Normal-mean toy model y_i ~ N(θ, 1). With the Gaussian prior the
//! posterior is available in closed form, which makes it a sampler oracle.

use nalgebra::{DMatrix, DVector};

use super::{Dataset, GaussianPrior, Model, ModelKind, Theta};
use crate::error::Result;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, Default)]
pub struct NormalMean;

impl Model for NormalMean {
    fn kind(&self) -> ModelKind {
        ModelKind::NormalMean
    }

    fn param_dim(&self, _p: usize) -> usize {
        1
    }

    fn check_response(&self, _y: f64) -> Result<()> {
        Ok(())
    }

    fn loglik_at(&self, theta: &Theta, y: f64, _x: &[f64]) -> f64 {
        -0.5 * (y - theta[0]).powi(2) - HALF_LN_2PI
    }

    fn add_grad_theta(&self, theta: &Theta, y: f64, _x: &[f64], scale: f64, out: &mut [f64]) {
        out[0] += scale * (y - theta[0]);
    }

    fn add_hess_theta(
        &self,
        _theta: &Theta,
        _y: f64,
        _x: &[f64],
        scale: f64,
        out: &mut DMatrix<f64>,
    ) {
        out[(0, 0)] -= scale;
    }

    fn data_derivatives(&self, theta: &Theta, z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        // covariates do not enter the likelihood
        let mut g = DVector::zeros(z.len());
        let mut h = DMatrix::zeros(z.len(), z.len());
        g[0] = -(z[0] - theta[0]);
        h[(0, 0)] = -1.0;
        Ok((g, h))
    }
}

/// Exact posterior (mean, variance) under a N(μ₀, τ₀²) prior.
pub fn conjugate_posterior(data: &Dataset, prior: &GaussianPrior) -> (f64, f64) {
    let prec0 = 1.0 / (prior.sd * prior.sd);
    let n = data.n() as f64;
    let sum: f64 = data.ys().iter().sum();
    let prec = prec0 + n;
    ((prec0 * prior.mean + sum) / prec, 1.0 / prec)
}
