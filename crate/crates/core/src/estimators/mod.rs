//! Subsampled estimators of the log-likelihood ℓ(θ) = Σ_i ℓ_i(θ) and of the
//! likelihood itself.
//!
//! Everything stays in the log domain. The difference estimator's variance
//! estimate carries the n²/m factor, so it estimates Var(ℓ̂_DE) = n²σ²_d/m
//! rather than the population variance σ²_d of the differences; this is the
//! quantity the bias correction exp(ℓ̂ − σ̂²/2) needs.

mod block_poisson;
mod planning;
mod subsample;

use rayon::prelude::*;

pub use block_poisson::{
    block_poisson_estimate, block_poisson_evaluate, block_poisson_from_dhat, default_lower_bound,
    BlockPoissonConfig, BlockPoissonEstimate,
};
pub use planning::{
    laplace_covariance, laplace_draws, laplace_precision, optimal_m_srs_wor, pilot_sigma2_d,
    plan_from_pilot, plan_sigma_target, sampling_fraction_srs_wor, srs_wor_variance,
    srs_wr_variance, PilotSettings, PlanningInputs, SubsamplePlan, MIN_PILOT_SIZE,
};
pub use subsample::{
    block_range, cpm_index, propose_u, BlockPoissonDraw, Dependence, SubsampleState,
};

use crate::control_variates::{ControlVariates, CvAt};
use crate::error::{Error, Result};
use crate::model::{Posterior, Theta};
use crate::summation::compensated_sum;

const PARALLEL_MIN: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikEstimate {
    pub value: f64,
    /// Estimate of Var(value).
    pub sample_variance: f64,
    pub m: usize,
    pub theta: Theta,
}

/// Total estimate Σq + (n/m)Σ_k d_k with its variance estimate
/// (n²/m)·(1/m)Σ_k (d_k − d̄)².
pub fn estimate_from_diffs(
    n: usize,
    sum_q: f64,
    diffs: &[f64],
    theta: &Theta,
) -> Result<LogLikEstimate> {
    let m = diffs.len();
    if m == 0 {
        return Err(Error::Domain("empty subsample".into()));
    }
    let nf = n as f64;
    let mf = m as f64;
    // shifted by the first difference so constant populations give exactly
    // zero variance
    let shift = diffs[0];
    let offset = compensated_sum(diffs.iter().map(|d| d - shift)) / mf;
    let ss = compensated_sum(diffs.iter().map(|d| {
        let e = (d - shift) - offset;
        e * e
    }));
    Ok(LogLikEstimate {
        value: sum_q + nf * (shift + offset),
        sample_variance: nf * nf / mf * (ss / mf),
        m,
        theta: theta.clone(),
    })
}

fn collect<F: Fn(usize) -> Result<f64> + Sync>(indices: &[usize], f: F) -> Result<Vec<f64>> {
    if indices.len() >= PARALLEL_MIN {
        indices.par_iter().map(|&i| f(i)).collect()
    } else {
        indices.iter().map(|&i| f(i)).collect()
    }
}

/// (n/m) Σ_k ℓ_{u_k}(θ) for indices drawn with replacement.
pub fn srs_wr_estimate(
    post: &Posterior,
    theta: &Theta,
    indices: &[usize],
) -> Result<LogLikEstimate> {
    let n = post.n();
    let ells = collect(indices, |i| {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        Ok(post.loglik_i(theta, i))
    })?;
    estimate_from_diffs(n, 0.0, &ells, theta)
}

/// Difference estimator Σ_i q_i(θ) + (n/m) Σ_k d_{u_k}(θ).
pub fn difference_estimate(
    post: &Posterior,
    cv: &ControlVariates,
    theta: &Theta,
    indices: &[usize],
) -> Result<LogLikEstimate> {
    difference_estimate_at(&cv.at(post, theta), indices)
}

pub fn difference_estimate_at(at: &CvAt<'_>, indices: &[usize]) -> Result<LogLikEstimate> {
    let diffs = collect(indices, |i| at.diff(i))?;
    estimate_from_diffs(at.n(), at.sum_q(), &diffs, at.theta())
}

/// log p̂_DE = ℓ̂_DE − σ̂²/2.
pub fn bias_corrected_likelihood(est: &LogLikEstimate) -> f64 {
    est.value - 0.5 * est.sample_variance
}

/// The bias-corrected log-likelihood estimate at fixed u together with its
/// θ-gradient.
///
/// With `include_variance_term` false the −σ̂²/2 term still enters the
/// value but not the gradient.
pub fn bias_corrected_with_gradient(
    post: &Posterior,
    cv: &ControlVariates,
    theta: &Theta,
    indices: &[usize],
    include_variance_term: bool,
) -> Result<(LogLikEstimate, Theta)> {
    let n = post.n();
    let d = post.dim();
    let m = indices.len();
    if m == 0 {
        return Err(Error::Domain("empty subsample".into()));
    }
    let at = cv.at(post, theta);
    let diffs = collect(indices, |i| at.diff(i))?;
    let est = estimate_from_diffs(n, at.sum_q(), &diffs, theta)?;
    let mean = est.value - at.sum_q();
    let dbar = mean / n as f64;
    let (nf, mf) = (n as f64, m as f64);
    let var_coef = if include_variance_term {
        nf * nf / mf * (2.0 / mf)
    } else {
        0.0
    };
    let mut grad = cv.grad_sum_q(post, theta)?;
    let g = grad.as_mut_slice();
    let mut gd = vec![0.0; d];
    for (k, &i) in indices.iter().enumerate() {
        gd.iter_mut().for_each(|v| *v = 0.0);
        post.add_grad_i(theta, i, 1.0, &mut gd);
        cv.add_grad_q(post, theta, i, -1.0, &mut gd)?;
        // ∇ of (n/m)Σd_k minus ½∇σ̂², using Σ_k (d_k − d̄)∇d̄ = 0
        let w = nf / mf - 0.5 * var_coef * (diffs[k] - dbar);
        g.iter_mut().zip(&gd).for_each(|(o, v)| *o += w * v);
    }
    Ok((est, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_variates::{ParamExpandedCache, StorageMode, TaylorOrder};
    use crate::model::testutil::{fd_grad, rel_err};
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    #[test]
    fn equal_contributions_give_exact_total() {
        let d = vec![2.5; 7];
        let e = estimate_from_diffs(40, 0.0, &d, &Theta::zeros(1)).unwrap();
        assert_eq!(e.value, 100.0);
        assert_eq!(e.sample_variance, 0.0);
        assert!(estimate_from_diffs(40, 0.0, &[], &Theta::zeros(1)).is_err());
    }

    #[test]
    fn exhaustive_srs_pairs() {
        // population ℓ = (1, 2, 3, 4), m = 2: all 16 ordered pairs
        let pop = [1.0, 2.0, 3.0, 4.0];
        let th = Theta::zeros(1);
        let mut mean = 0.0;
        let mut second = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let v = estimate_from_diffs(4, 0.0, &[pop[a], pop[b]], &th)
                    .unwrap()
                    .value;
                mean += v / 16.0;
                second += v * v / 16.0;
            }
        }
        assert!((mean - 10.0).abs() < 1e-12);
        assert!((second - mean * mean - 10.0).abs() < 1e-12);
    }

    #[test]
    fn exact_control_variates_give_the_full_loglik() {
        let post = crate::control_variates::testutil::poisson_posterior(500, 1);
        let th = Theta::from_vec(vec![0.9, 0.8]);
        let e = difference_estimate(&post, &ControlVariates::Exact, &th, &[3, 3, 17, 400]).unwrap();
        assert_eq!(e.value, post.loglik(&th));
        assert_eq!(e.sample_variance, 0.0);
        assert_eq!(bias_corrected_likelihood(&e), e.value);
        assert!(difference_estimate(&post, &ControlVariates::Exact, &th, &[500]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_at_fixed_u() {
        let post = crate::control_variates::testutil::poisson_posterior(1000, 2);
        let ts = Theta::from_vec(vec![1.0, 0.75]);
        let cv = ControlVariates::Param(
            ParamExpandedCache::build(&post, &ts, TaylorOrder::Second, StorageMode::Stored)
                .unwrap(),
        );
        let mut rng = stream(9, 0, Purpose::Subsample);
        let u: Vec<usize> = (0..50).map(|_| rng.random_range(0..1000)).collect();
        let th = Theta::from_vec(vec![1.03, 0.71]);
        for include in [true, false] {
            let (_, g) = bias_corrected_with_gradient(&post, &cv, &th, &u, include).unwrap();
            let f = |t: &Theta| {
                let e = difference_estimate(&post, &cv, t, &u).unwrap();
                if include {
                    bias_corrected_likelihood(&e)
                } else {
                    e.value
                }
            };
            let fd = fd_grad(f, &th, 1e-5);
            for j in 0..2 {
                assert!(
                    rel_err(g[j], fd[j]) < 1e-6,
                    "{include}: {} vs {}",
                    g[j],
                    fd[j]
                );
            }
        }
    }
}
