//! Block-Poisson estimator of the likelihood.
//!
//! p̂_B = exp(Σq) Π_{l=1}^{λ} ξ_l with ξ_l = exp((a+λ)/λ) Π_{h=1}^{X_l}
//! (d̂^{(h,l)} − a)/λ and X_l ∼ Pois(1). It is unbiased for the likelihood
//! but can be negative, so it is returned as log|p̂_B| and a sign.

use rand::Rng;

use super::subsample::{BlockPoissonDraw, Dependence, SubsampleState};
use crate::control_variates::{ControlVariates, CvAt};
use crate::error::{Error, Result};
use crate::model::{Posterior, Theta};
use crate::summation::{compensated_sum, Neumaier};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPoissonConfig {
    pub lambda: usize,
    pub m_b: usize,
    /// Soft lower bound on the mini-batch estimates d̂.
    pub a: f64,
}

impl BlockPoissonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(Error::config(
                "block_poisson.lambda",
                "λ must be at least 1",
            ));
        }
        if self.m_b == 0 {
            return Err(Error::config(
                "block_poisson.m_b",
                "mini-batch size must be at least 1",
            ));
        }
        if !self.a.is_finite() {
            return Err(Error::config(
                "block_poisson.a",
                "lower bound must be finite",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPoissonEstimate {
    pub log_abs: f64,
    /// −1, +1, or 0 when some d̂ equals a exactly.
    pub sign: i8,
    pub sum_q: f64,
    pub evaluations: usize,
}

/// log|p̂_B| and its sign from Σq and the mini-batch estimates d̂.
pub fn block_poisson_from_dhat(
    sum_q: f64,
    lambda: usize,
    a: f64,
    dhat: impl IntoIterator<Item = f64>,
) -> (f64, i8) {
    let lam = lambda as f64;
    let mut acc = Neumaier::default();
    acc.add(sum_q);
    acc.add(a + lam);
    let mut sign = 1i8;
    for d in dhat {
        let f = (d - a) / lam;
        if f == 0.0 {
            return (f64::NEG_INFINITY, 0);
        }
        if f < 0.0 {
            sign = -sign;
        }
        acc.add(f.abs().ln());
    }
    (acc.total(), sign)
}

pub fn block_poisson_evaluate(
    at: &CvAt<'_>,
    a: f64,
    draw: &BlockPoissonDraw,
) -> Result<BlockPoissonEstimate> {
    let n = at.n() as f64;
    let scale = n / draw.m_b as f64;
    let mut dhat = Vec::with_capacity(draw.batch_count());
    for batch in draw.batches.iter().flatten() {
        let diffs: Vec<f64> = batch.iter().map(|&i| at.diff(i)).collect::<Result<_>>()?;
        dhat.push(scale * compensated_sum(diffs));
    }
    let (log_abs, sign) = block_poisson_from_dhat(at.sum_q(), draw.lambda(), a, dhat);
    Ok(BlockPoissonEstimate {
        log_abs,
        sign,
        sum_q: at.sum_q(),
        evaluations: draw.batch_count() * draw.m_b,
    })
}

/// Draws an independent Block-Poisson structure and evaluates it at θ.
pub fn block_poisson_estimate(
    post: &Posterior,
    cv: &ControlVariates,
    theta: &Theta,
    cfg: &BlockPoissonConfig,
    rng: &mut impl Rng,
) -> Result<(BlockPoissonEstimate, SubsampleState)> {
    cfg.validate()?;
    let state = SubsampleState::draw_block_poisson(
        &Dependence::Independent,
        post.n(),
        cfg.lambda,
        cfg.m_b,
        rng,
    )?;
    let SubsampleState::BlockPoisson { draw, .. } = &state else {
        unreachable!("drawn as Block-Poisson")
    };
    let est = block_poisson_evaluate(&cv.at(post, theta), cfg.a, draw)?;
    Ok((est, state))
}

/// a = d̂ − λ, where d̂ estimates Σd at θ⋆ from `pilot_m` uniform draws.
pub fn default_lower_bound(
    post: &Posterior,
    cv: &ControlVariates,
    theta_star: &Theta,
    lambda: usize,
    pilot_m: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if pilot_m == 0 {
        return Err(Error::config(
            "plan.pilot_m",
            "pilot size must be at least 1",
        ));
    }
    let n = post.n();
    let at = cv.at(post, theta_star);
    let diffs: Vec<f64> = (0..pilot_m)
        .map(|_| at.diff(rng.random_range(0..n)))
        .collect::<Result<_>>()?;
    Ok(n as f64 * compensated_sum(diffs) / pilot_m as f64 - lambda as f64)
}
