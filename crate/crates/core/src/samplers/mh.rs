use std::time::Instant;

use super::{accept, ChainTrace, ProposalConfig};
use crate::control_variates::ControlVariates;
use crate::error::{Error, Result};
use crate::estimators::{
    bias_corrected_likelihood, block_poisson_evaluate, difference_estimate_at, propose_u,
    BlockPoissonConfig, Dependence, SubsampleState,
};
use crate::model::{Posterior, Theta};
use crate::rng::{stream, Purpose};

pub fn mh_run(
    post: &Posterior,
    proposal: &ProposalConfig,
    theta0: &Theta,
    n_iter: usize,
    seed: u64,
    chain: u64,
) -> Result<ChainTrace> {
    check_start(post, proposal, theta0)?;
    let start = Instant::now();
    let mut rng = stream(seed, chain, Purpose::Theta);
    let mut theta = theta0.clone();
    let mut ll = post.loglik(&theta);
    let mut lp = ll + post.log_prior(&theta);
    if !lp.is_finite() {
        return Err(Error::NonFinite {
            what: "log-posterior at the starting point",
            index: 0,
        });
    }
    let mut trace = ChainTrace::new("mh", seed, chain, post.dim(), n_iter);
    for _ in 0..n_iter {
        let (prop, corr) = proposal.propose(&theta, &mut rng);
        let prop_ll = post.loglik(&prop);
        let prop_lp = prop_ll + post.log_prior(&prop);
        trace.evaluations += post.n() as u64;
        let accepted = accept(lp, prop_lp, corr, &mut rng);
        if accepted {
            theta = prop;
            ll = prop_ll;
            lp = prop_lp;
        }
        trace.push(&theta, accepted, ll, 1);
    }
    trace.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(trace)
}

fn check_start(post: &Posterior, proposal: &ProposalConfig, theta0: &Theta) -> Result<()> {
    if theta0.len() != post.dim() || proposal.dim() != post.dim() {
        return Err(Error::config(
            "theta0",
            format!(
                "model has {} parameters; θ0 has {}, proposal {}",
                post.dim(),
                theta0.len(),
                proposal.dim()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PmmhEstimator {
    /// exp(ℓ̂_DE − σ̂²/2) from m indices drawn with replacement.
    Difference { m: usize },
    /// Signed Block-Poisson estimator; the chain runs on |p̂_B|.
    BlockPoisson(BlockPoissonConfig),
}

#[derive(Debug, Clone)]
pub struct PmmhConfig {
    pub estimator: PmmhEstimator,
    pub dependence: Dependence,
    pub proposal: ProposalConfig,
}

struct Estimate {
    log_abs: f64,
    sign: i8,
}

fn evaluate(
    post: &Posterior,
    cv: &ControlVariates,
    estimator: &PmmhEstimator,
    theta: &Theta,
    u: &SubsampleState,
) -> Result<Estimate> {
    let at = cv.at(post, theta);
    match (estimator, u) {
        (PmmhEstimator::Difference { .. }, _) => {
            let indices = u
                .indices()
                .expect("flat subsample for the difference estimator");
            let est = difference_estimate_at(&at, indices)?;
            Ok(Estimate {
                log_abs: bias_corrected_likelihood(&est),
                sign: 1,
            })
        }
        (PmmhEstimator::BlockPoisson(cfg), SubsampleState::BlockPoisson { draw, .. }) => {
            let est = block_poisson_evaluate(&at, cfg.a, draw)?;
            Ok(Estimate {
                log_abs: est.log_abs,
                sign: est.sign,
            })
        }
        _ => unreachable!("subsample kind follows the estimator"),
    }
}

/// Pseudo-marginal MH: θ′ and u′ are proposed together and accepted with
/// the ratio of |p̂|·prior values. The trace records log|p̂| and the sign of
/// the current estimate.
pub fn pmmh_run(
    post: &Posterior,
    cv: &ControlVariates,
    cfg: &PmmhConfig,
    theta0: &Theta,
    n_iter: usize,
    seed: u64,
    chain: u64,
) -> Result<ChainTrace> {
    check_start(post, &cfg.proposal, theta0)?;
    cv.check_compatible(post)?;
    let start = Instant::now();
    let n = post.n();
    let mut theta_rng = stream(seed, chain, Purpose::Theta);
    let mut u_rng = stream(seed, chain, Purpose::Subsample);
    let mut u = match cfg.estimator {
        PmmhEstimator::Difference { m } => SubsampleState::draw(&cfg.dependence, n, m, &mut u_rng)?,
        PmmhEstimator::BlockPoisson(bp) => {
            bp.validate()?;
            SubsampleState::draw_block_poisson(&cfg.dependence, n, bp.lambda, bp.m_b, &mut u_rng)?
        }
    };
    let mut theta = theta0.clone();
    let mut cur = evaluate(post, cv, &cfg.estimator, &theta, &u)?;
    let mut lp = cur.log_abs + post.log_prior(&theta);
    if !lp.is_finite() || cur.sign == 0 {
        return Err(Error::NonFinite {
            what: "likelihood estimate at the starting point",
            index: 0,
        });
    }
    let mut trace = ChainTrace::new(
        match cfg.estimator {
            PmmhEstimator::Difference { .. } => "pmmh",
            PmmhEstimator::BlockPoisson(_) => "signed_pmmh",
        },
        seed,
        chain,
        post.dim(),
        n_iter,
    );
    trace.evaluations += u.evaluations() as u64;
    for step in 0..n_iter {
        let u_prop = propose_u(&u, &cfg.dependence, n, step, &mut u_rng)?;
        let (theta_prop, corr) = cfg.proposal.propose(&theta, &mut theta_rng);
        let prop = evaluate(post, cv, &cfg.estimator, &theta_prop, &u_prop)?;
        trace.evaluations += u_prop.evaluations() as u64;
        let prop_lp = if prop.sign == 0 || !prop.log_abs.is_finite() {
            trace.invalid_estimates += 1;
            f64::NEG_INFINITY
        } else {
            prop.log_abs + post.log_prior(&theta_prop)
        };
        let accepted = accept(lp, prop_lp, corr, &mut theta_rng);
        if accepted {
            theta = theta_prop;
            u = u_prop;
            cur = prop;
            lp = prop_lp;
        }
        trace.push(&theta, accepted, cur.log_abs, cur.sign);
    }
    trace.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(trace)
}
