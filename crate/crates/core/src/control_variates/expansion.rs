//! Choice of the parameter-space expansion point θ⋆.

use std::sync::Arc;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::model::{Posterior, Theta};
use crate::rng::{stream, Purpose};

const NEWTON_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub enum ExpansionPoint {
    Given(Theta),
    /// Posterior mode on the full data.
    FullMode,
    /// Posterior mode on a random subset of [`pilot_size`] observations.
    PilotMode {
        seed: u64,
    },
}

/// ñ = ⌈10√n⌉, capped at n.
pub fn pilot_size(n: usize) -> usize {
    ((10.0 * (n as f64).sqrt()).ceil() as usize).min(n)
}

/// Newton's method on the log-posterior with step halving, starting at
/// `start`.
pub fn posterior_mode(post: &Posterior, start: &Theta) -> Result<Theta> {
    newton_steps(post, start, NEWTON_STEPS)
}

/// At most `steps` damped Newton steps on the full-data log-posterior.
pub fn newton_steps(post: &Posterior, start: &Theta, steps: usize) -> Result<Theta> {
    let mut theta = start.clone();
    let mut value = post.log_posterior(&theta);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "log-posterior at Newton start",
            index: 0,
        });
    }
    let prior_curv = post.prior().hess_diag();
    for _ in 0..steps {
        let grad = post.grad_loglik(&theta) + post.prior().grad(&theta);
        let mut hess = post.hess_loglik(&theta);
        for j in 0..theta.len() {
            hess[(j, j)] += prior_curv;
        }
        let neg = -hess;
        let step = match neg.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            // not concave here: fall back to a gradient step
            None => grad.clone() / neg.norm().max(1.0),
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let cand = &theta + &step * t;
            let v = post.log_posterior(&cand);
            if v.is_finite() && v >= value {
                theta = cand;
                value = v;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || step.amax() * t < 1e-12 {
            break;
        }
    }
    Ok(theta)
}

pub fn select_expansion_point(post: &Posterior, point: &ExpansionPoint) -> Result<Theta> {
    let start = Theta::zeros(post.dim());
    match point {
        ExpansionPoint::Given(theta) => {
            if theta.len() != post.dim() {
                return Err(Error::config(
                    "cv.expansion",
                    format!("expected {} entries, got {}", post.dim(), theta.len()),
                ));
            }
            Ok(theta.clone())
        }
        ExpansionPoint::FullMode => posterior_mode(post, &start),
        ExpansionPoint::PilotMode { seed } => {
            let n = post.n();
            let mut rng = stream(*seed, 0, Purpose::Auxiliary);
            let mut idx = index::sample(&mut rng, n, pilot_size(n)).into_vec();
            idx.sort_unstable();
            let pilot_data = post.data().subset(&idx)?;
            let pilot = Posterior::new(post.model_arc(), Arc::new(pilot_data), *post.prior())?;
            posterior_mode(&pilot, &start)
        }
    }
}
