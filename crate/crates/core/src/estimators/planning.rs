//! Subsample-size planning.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::control_variates::{newton_steps, ControlVariates};
use crate::error::{Error, Result};
use crate::model::{Posterior, Theta};
use crate::summation::compensated_sum;

pub const MIN_PILOT_SIZE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanningInputs {
    pub n: usize,
    /// Population variance of the sampled quantity (ℓ_i or d_i).
    pub sigma2_pop: f64,
    /// Target variance of the total estimator.
    pub target: f64,
}

impl PlanningInputs {
    pub fn new(n: usize, sigma2_pop: f64, target: f64) -> Self {
        Self {
            n,
            sigma2_pop,
            target,
        }
    }
}

/// Var(ℓ̂) = (n²/m)(1 − m/n)σ² for SRS without replacement.
pub fn srs_wor_variance(n: usize, m: usize, sigma2_pop: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    n * n / m * (1.0 - m / n) * sigma2_pop
}

/// Var(ℓ̂) = n²σ²/m for SRS with replacement.
pub fn srs_wr_variance(n: usize, m: usize, sigma2_pop: f64) -> f64 {
    let n = n as f64;
    n * n * sigma2_pop / m as f64
}

/// Sampling fraction m/n = nσ²/(nσ² + target) that makes the
/// without-replacement variance equal the target.
pub fn sampling_fraction_srs_wor(plan: &PlanningInputs) -> f64 {
    let ns = plan.n as f64 * plan.sigma2_pop;
    ns / (ns + plan.target)
}

/// ⌈n²σ²/(nσ² + target)⌉, capped at n.
pub fn optimal_m_srs_wor(plan: &PlanningInputs) -> usize {
    let m = (plan.n as f64 * sampling_fraction_srs_wor(plan)).ceil();
    (m as usize).clamp(1, plan.n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsamplePlan {
    pub m: usize,
    pub sigma2_d: f64,
    /// Set when the pilot variance was zero and m fell back to 1.
    pub zero_variance: bool,
}

/// m = ⌈n²σ²_d / target⌉ for with-replacement sampling of differences.
pub fn plan_sigma_target(n: usize, sigma2_d: f64, target: f64) -> Result<SubsamplePlan> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::config(
            "plan.target",
            format!("target variance must be positive, got {target}"),
        ));
    }
    if !(sigma2_d >= 0.0) || !sigma2_d.is_finite() {
        return Err(Error::Domain(format!(
            "pilot variance must be finite and non-negative, got {sigma2_d}"
        )));
    }
    if sigma2_d == 0.0 {
        return Ok(SubsamplePlan {
            m: 1,
            sigma2_d,
            zero_variance: true,
        });
    }
    let nf = n as f64;
    let m = (nf * nf * sigma2_d / target).ceil().max(1.0);
    Ok(SubsamplePlan {
        m: m as usize,
        sigma2_d,
        zero_variance: false,
    })
}

/// Pilot estimate of σ²_d: the sample variance of d_i over `pilot_m`
/// uniformly drawn indices at each θ in `thetas`, averaged over θ.
pub fn pilot_sigma2_d(
    post: &Posterior,
    cv: &ControlVariates,
    thetas: &[Theta],
    pilot_m: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if pilot_m < MIN_PILOT_SIZE {
        return Err(Error::config(
            "plan.pilot_m",
            format!("pilot size must be at least {MIN_PILOT_SIZE}, got {pilot_m}"),
        ));
    }
    if thetas.is_empty() {
        return Err(Error::Domain("no pilot parameter values".into()));
    }
    let n = post.n();
    let mut per_theta = Vec::with_capacity(thetas.len());
    for theta in thetas {
        let at = cv.at(post, theta);
        let diffs: Vec<f64> = (0..pilot_m)
            .map(|_| at.diff(rng.random_range(0..n)))
            .collect::<Result<_>>()?;
        let mean = compensated_sum(diffs.iter().copied()) / pilot_m as f64;
        let ss = compensated_sum(diffs.iter().map(|d| (d - mean) * (d - mean)));
        per_theta.push(ss / (pilot_m - 1) as f64);
    }
    Ok(compensated_sum(per_theta.iter().copied()) / thetas.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotSettings {
    /// Laplace draws of θ at which σ²_d is measured.
    pub draws: usize,
    /// Indices drawn per θ.
    pub m: usize,
}

impl Default for PilotSettings {
    fn default() -> Self {
        Self { draws: 20, m: 200 }
    }
}

/// Plans m for a target Var(ℓ̂). σ²_d is measured at Laplace draws centred
/// one Newton step from θ⋆, which lands close to the full-data mode.
pub fn plan_from_pilot(
    post: &Posterior,
    cv: &ControlVariates,
    theta_star: &Theta,
    target: f64,
    pilot: PilotSettings,
    rng: &mut impl Rng,
) -> Result<SubsamplePlan> {
    if pilot.draws == 0 {
        return Err(Error::config(
            "plan.pilot_draws",
            "need at least one pilot draw",
        ));
    }
    let center = newton_steps(post, theta_star, 1)?;
    let thetas = laplace_draws(post, &center, pilot.draws, rng)?;
    let sigma2_d = pilot_sigma2_d(post, cv, &thetas, pilot.m, rng)?;
    plan_sigma_target(post.n(), sigma2_d, target)
}

/// Negative Hessian of the log posterior at `mode`.
pub fn laplace_precision(post: &Posterior, mode: &Theta) -> DMatrix<f64> {
    let mut neg_hess = -post.hess_loglik(mode);
    for j in 0..post.dim() {
        neg_hess[(j, j)] -= post.prior().hess_diag();
    }
    neg_hess
}

/// Inverse negative Hessian of the log posterior at `mode`.
pub fn laplace_covariance(post: &Posterior, mode: &Theta) -> Result<DMatrix<f64>> {
    let precision = laplace_precision(post, mode)
        .cholesky()
        .ok_or_else(|| Error::Domain("log-posterior is not locally concave at the mode".into()))?;
    let cov = precision.inverse();
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Draws from the Laplace approximation N(mode, (−∇² log π(mode))⁻¹).
pub fn laplace_draws(
    post: &Posterior,
    mode: &Theta,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Theta>> {
    let d = post.dim();
    let chol = laplace_covariance(post, mode)?
        .cholesky()
        .ok_or_else(|| Error::Domain("Laplace covariance is not positive definite".into()))?;
    let l = chol.l();
    Ok((0..count)
        .map(|_| {
            let z = Theta::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            mode + &l * z
        })
        .collect())
}
