use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{accept, ChainTrace};
use crate::control_variates::ControlVariates;
use crate::error::{Error, Result};
use crate::estimators::{
    bias_corrected_likelihood, bias_corrected_with_gradient, difference_estimate, propose_u,
    Dependence, SubsampleState,
};
use crate::model::{Posterior, Theta};
use crate::rng::{stream, Purpose};

/// Trajectories whose energy error exceeds this are rejected as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Potential energy U(θ) = −log target.
pub trait Potential {
    fn dim(&self) -> usize;
    fn value(&self, theta: &Theta) -> f64;
    fn grad(&self, theta: &Theta) -> Theta;
    /// Log-likelihood part of −U, recorded in traces.
    fn loglik(&self, theta: &Theta) -> f64 {
        -self.value(theta)
    }
}

impl Potential for Posterior {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn value(&self, theta: &Theta) -> f64 {
        -self.log_posterior(theta)
    }

    fn grad(&self, theta: &Theta) -> Theta {
        -(self.grad_loglik(theta) + self.prior().grad(theta))
    }

    fn loglik(&self, theta: &Theta) -> f64 {
        Posterior::loglik(self, theta)
    }
}

#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub epsilon: f64,
    pub steps: usize,
    mass: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    mass_chol: Cholesky<f64, Dyn>,
}

impl HmcConfig {
    pub fn new(epsilon: f64, steps: usize, mass: DMatrix<f64>) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::config(
                "hmc.epsilon",
                format!("step size must be positive, got {epsilon}"),
            ));
        }
        if steps == 0 {
            return Err(Error::config(
                "hmc.steps",
                "need at least one leapfrog step",
            ));
        }
        if mass.nrows() != mass.ncols() || mass != mass.transpose() {
            return Err(Error::config("hmc.mass", "mass matrix must be symmetric"));
        }
        let mass_chol = mass
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("hmc.mass", "mass matrix must be positive definite"))?;
        let mass_inv = mass_chol.inverse();
        Ok(Self {
            epsilon,
            steps,
            mass,
            mass_inv,
            mass_chol,
        })
    }

    pub fn identity_mass(d: usize, epsilon: f64, steps: usize) -> Result<Self> {
        Self::new(epsilon, steps, DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn kinetic(&self, p: &Theta) -> f64 {
        0.5 * (p.transpose() * &self.mass_inv * p)[(0, 0)]
    }

    fn draw_momentum(&self, rng: &mut impl Rng) -> Theta {
        let d = self.dim();
        let z = Theta::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        self.mass_chol.l() * z
    }
}

/// L leapfrog steps: a half momentum step, then L position steps with full
/// momentum steps between them and a closing half step. Returns `None` if
/// the state stops being finite.
pub fn leapfrog(
    pot: &impl Potential,
    cfg: &HmcConfig,
    theta: &Theta,
    momentum: &Theta,
) -> Option<(Theta, Theta)> {
    let eps = cfg.epsilon;
    let mut th = theta.clone();
    let mut p = momentum - pot.grad(&th) * (0.5 * eps);
    for l in 1..=cfg.steps {
        th += &cfg.mass_inv * &p * eps;
        let g = pot.grad(&th);
        if l != cfg.steps {
            p -= g * eps;
        } else {
            p -= g * (0.5 * eps);
        }
        if !th.iter().chain(p.iter()).all(|v| v.is_finite()) {
            return None;
        }
    }
    Some((th, p))
}

struct HmcStep {
    theta: Theta,
    u: f64,
    accepted: bool,
    divergent: bool,
}

fn hmc_step(
    pot: &impl Potential,
    cfg: &HmcConfig,
    theta: &Theta,
    u_cur: f64,
    rng: &mut impl Rng,
) -> HmcStep {
    let m = cfg.draw_momentum(rng);
    let h0 = u_cur + cfg.kinetic(&m);
    let end = leapfrog(pot, cfg, theta, &m).map(|(th, p)| {
        let u = pot.value(&th);
        (th, u, u + cfg.kinetic(&p))
    });
    match end {
        Some((th, u, h1)) if h1.is_finite() && (h1 - h0).abs() <= DIVERGENCE_THRESHOLD => {
            let accepted = accept(-h0, -h1, 0.0, rng);
            if accepted {
                HmcStep {
                    theta: th,
                    u,
                    accepted,
                    divergent: false,
                }
            } else {
                HmcStep {
                    theta: theta.clone(),
                    u: u_cur,
                    accepted,
                    divergent: false,
                }
            }
        }
        _ => {
            let _ = accept(0.0, f64::NEG_INFINITY, 0.0, rng);
            HmcStep {
                theta: theta.clone(),
                u: u_cur,
                accepted: false,
                divergent: true,
            }
        }
    }
}

/// HMC on any differentiable potential.
pub fn hmc_run_potential(
    pot: &impl Potential,
    cfg: &HmcConfig,
    theta0: &Theta,
    n_iter: usize,
    seed: u64,
    chain: u64,
) -> Result<ChainTrace> {
    if theta0.len() != pot.dim() || cfg.dim() != pot.dim() {
        return Err(Error::config(
            "theta0",
            "dimension does not match the target",
        ));
    }
    let start = Instant::now();
    let mut rng = stream(seed, chain, Purpose::Theta);
    let mut theta = theta0.clone();
    let mut u = pot.value(&theta);
    if !u.is_finite() {
        return Err(Error::NonFinite {
            what: "potential energy at the starting point",
            index: 0,
        });
    }
    let mut trace = ChainTrace::new("hmc", seed, chain, pot.dim(), n_iter);
    let mut ll = pot.loglik(&theta);
    for _ in 0..n_iter {
        let step = hmc_step(pot, cfg, &theta, u, &mut rng);
        if step.divergent {
            trace.divergences += 1;
        }
        if step.accepted {
            theta = step.theta;
            u = step.u;
            ll = pot.loglik(&theta);
        }
        trace.push(&theta, step.accepted, ll, 1);
    }
    trace.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// HMC with U(θ) = −log p(y|θ)p(θ) on the full data.
pub fn hmc_run(
    post: &Posterior,
    cfg: &HmcConfig,
    theta0: &Theta,
    n_iter: usize,
    seed: u64,
    chain: u64,
) -> Result<ChainTrace> {
    let mut trace = hmc_run_potential(post, cfg, theta0, n_iter, seed, chain)?;
    trace.evaluations = (n_iter * (cfg.steps + 1) * post.n()) as u64;
    Ok(trace)
}

/// Û(θ, u) = −(ℓ̂_DE − σ̂²/2 + log p(θ)) at a fixed subsample u.
pub struct EcsPotential<'a> {
    pub post: &'a Posterior,
    pub cv: &'a ControlVariates,
    pub indices: &'a [usize],
    /// Whether ∇(σ̂²/2) enters the dynamics.
    pub variance_gradient: bool,
}

impl EcsPotential<'_> {
    pub fn log_estimate(&self, theta: &Theta) -> Result<f64> {
        Ok(bias_corrected_likelihood(&difference_estimate(
            self.post,
            self.cv,
            theta,
            self.indices,
        )?))
    }
}

impl Potential for EcsPotential<'_> {
    fn dim(&self) -> usize {
        self.post.dim()
    }

    fn value(&self, theta: &Theta) -> f64 {
        match self.log_estimate(theta) {
            Ok(v) => -(v + self.post.log_prior(theta)),
            Err(_) => f64::NAN,
        }
    }

    fn grad(&self, theta: &Theta) -> Theta {
        match bias_corrected_with_gradient(
            self.post,
            self.cv,
            theta,
            self.indices,
            self.variance_gradient,
        ) {
            Ok((_, g)) => -(g + self.post.prior().grad(theta)),
            Err(_) => Theta::from_element(theta.len(), f64::NAN),
        }
    }

    fn loglik(&self, theta: &Theta) -> f64 {
        self.log_estimate(theta).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct EcsConfig {
    pub hmc: HmcConfig,
    pub dependence: Dependence,
    pub m: usize,
    pub variance_gradient: bool,
}

/// Two-block Gibbs sampler: an MH update of the subsample u at the current
/// θ, then an HMC update of θ whose trajectory and acceptance both use
/// Û(·, u) with the updated u.
pub fn hmc_ecs_run(
    post: &Posterior,
    cv: &ControlVariates,
    cfg: &EcsConfig,
    theta0: &Theta,
    n_iter: usize,
    seed: u64,
    chain: u64,
) -> Result<ChainTrace> {
    if !cv.supports_theta_gradient() {
        return Err(Error::Unsupported(
            "HMC-ECS needs θ-gradients of the control variates; data-expanded control variates do not provide them".into(),
        ));
    }
    cv.check_compatible(post)?;
    if theta0.len() != post.dim() || cfg.hmc.dim() != post.dim() {
        return Err(Error::config(
            "theta0",
            "dimension does not match the model",
        ));
    }
    let start = Instant::now();
    let n = post.n();
    let mut theta_rng = stream(seed, chain, Purpose::Theta);
    let mut u_rng = stream(seed, chain, Purpose::Subsample);
    let mut u = SubsampleState::draw(&cfg.dependence, n, cfg.m, &mut u_rng)?;
    let mut theta = theta0.clone();
    fn potential<'a>(
        post: &'a Posterior,
        cv: &'a ControlVariates,
        cfg: &EcsConfig,
        u: &'a SubsampleState,
    ) -> EcsPotential<'a> {
        EcsPotential {
            post,
            cv,
            indices: u.indices().expect("flat subsample"),
            variance_gradient: cfg.variance_gradient,
        }
    }
    let mut log_p = potential(post, cv, cfg, &u).log_estimate(&theta)?;
    if !(log_p + post.log_prior(&theta)).is_finite() {
        return Err(Error::NonFinite {
            what: "likelihood estimate at the starting point",
            index: 0,
        });
    }
    let mut trace = ChainTrace::new("hmc_ecs", seed, chain, post.dim(), n_iter);
    trace.u_accept.reserve(n_iter);
    for step in 0..n_iter {
        // subsample block
        let u_prop = propose_u(&u, &cfg.dependence, n, step, &mut u_rng)?;
        let log_p_prop = potential(post, cv, cfg, &u_prop).log_estimate(&theta)?;
        trace.evaluations += (2 * cfg.m) as u64;
        if !log_p_prop.is_finite() {
            trace.invalid_estimates += 1;
        }
        let u_accepted = accept(log_p, log_p_prop, 0.0, &mut u_rng);
        if u_accepted {
            u = u_prop;
            log_p = log_p_prop;
        }
        trace.u_accept.push(u_accepted);
        // θ block at fixed u
        let pot = potential(post, cv, cfg, &u);
        let u_energy = -(log_p + post.log_prior(&theta));
        let hs = hmc_step(&pot, &cfg.hmc, &theta, u_energy, &mut theta_rng);
        trace.evaluations += (cfg.m * (cfg.hmc.steps + 1)) as u64;
        if hs.divergent {
            trace.divergences += 1;
        }
        if hs.accepted {
            theta = hs.theta;
            log_p = -hs.u - post.log_prior(&theta);
        }
        trace.push(&theta, hs.accepted, log_p, 1);
    }
    trace.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_variates::testutil::poisson_posterior;
    use crate::control_variates::{ParamExpandedCache, StorageMode, TaylorOrder};

    pub struct StdNormal(pub usize);

    impl Potential for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, theta: &Theta) -> f64 {
            0.5 * theta.norm_squared()
        }
        fn grad(&self, theta: &Theta) -> Theta {
            theta.clone()
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let post = poisson_posterior(500, 1);
        let cfg = HmcConfig::identity_mass(2, 0.002, 25).unwrap();
        let th = Theta::from_vec(vec![1.0, 0.7]);
        let p = Theta::from_vec(vec![3.0, -2.0]);
        let (th1, p1) = leapfrog(&post, &cfg, &th, &p).unwrap();
        let (th2, p2) = leapfrog(&post, &cfg, &th1, &-p1).unwrap();
        assert!((th2 - th).amax() < 1e-10);
        assert!((p2 + p).amax() < 1e-10);
    }

    #[test]
    fn energy_error_is_second_order() {
        let post = poisson_posterior(500, 2);
        let th = Theta::from_vec(vec![1.0, 0.7]);
        let p = Theta::from_vec(vec![10.0, -7.0]);
        let dh = |eps: f64, steps: usize| {
            let cfg = HmcConfig::identity_mass(2, eps, steps).unwrap();
            let (t1, p1) = leapfrog(&post, &cfg, &th, &p).unwrap();
            (post.value(&t1) + cfg.kinetic(&p1) - post.value(&th) - cfg.kinetic(&p)).abs()
        };
        let a = dh(0.002, 10);
        let b = dh(0.001, 20);
        assert!((b / a - 0.25).abs() < 0.05, "ratio {}", b / a);
    }

    #[test]
    fn leapfrog_preserves_volume() {
        let pot = poisson_posterior(300, 3);
        let cfg = HmcConfig::identity_mass(2, 0.003, 1).unwrap();
        let x0 = [1.0, 0.7, 2.0, -1.0];
        let map = |x: &[f64]| {
            let (t, p) = leapfrog(
                &pot,
                &cfg,
                &Theta::from_vec(x[..2].to_vec()),
                &Theta::from_vec(x[2..].to_vec()),
            )
            .unwrap();
            [t[0], t[1], p[0], p[1]]
        };
        let h = 1e-6;
        let mut jac = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut a = x0;
            let mut b = x0;
            a[j] += h;
            b[j] -= h;
            let (fa, fb) = (map(&a), map(&b));
            for i in 0..4 {
                jac[(i, j)] = (fa[i] - fb[i]) / (2.0 * h);
            }
        }
        assert!(
            (jac.determinant() - 1.0).abs() < 1e-6,
            "{}",
            jac.determinant()
        );
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = HmcConfig::identity_mass(2, 0.4, 5).unwrap();
        let t = hmc_run_potential(&StdNormal(2), &cfg, &Theta::zeros(2), 20_000, 5, 0).unwrap();
        for j in 0..2 {
            let x = t.coordinate(j, 0);
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
            assert!(mean.abs() < 0.05, "{mean}");
            assert!((var - 1.0).abs() < 0.08, "{var}");
        }
    }

    #[test]
    fn exact_ecs_reproduces_hmc() {
        let post = poisson_posterior(300, 4);
        let hmc = HmcConfig::identity_mass(2, 0.01, 8).unwrap();
        let th = Theta::from_vec(vec![1.0, 0.7]);
        let a = hmc_run(&post, &hmc, &th, 300, 7, 0).unwrap();
        let cfg = EcsConfig {
            hmc,
            dependence: Dependence::Independent,
            m: 4,
            variance_gradient: true,
        };
        let b = hmc_ecs_run(&post, &ControlVariates::Exact, &cfg, &th, 300, 7, 0).unwrap();
        assert_eq!(a.accept, b.accept);
        for i in 0..a.len() {
            assert!(
                (Theta::from_column_slice(a.draw(i)) - Theta::from_column_slice(b.draw(i))).amax()
                    < 1e-9
            );
        }
    }

    #[test]
    fn ecs_potential_gradient_matches_finite_differences() {
        let post = poisson_posterior(1000, 5);
        let ts = Theta::from_vec(vec![1.0, 0.75]);
        let cv = ControlVariates::Param(
            ParamExpandedCache::build(&post, &ts, TaylorOrder::Second, StorageMode::Stored)
                .unwrap(),
        );
        let idx: Vec<usize> = (0..40).map(|k| (k * 37) % 1000).collect();
        let pot = EcsPotential {
            post: &post,
            cv: &cv,
            indices: &idx,
            variance_gradient: true,
        };
        let th = Theta::from_vec(vec![0.97, 0.78]);
        let g = pot.grad(&th);
        let fd = crate::model::testutil::fd_grad(|t| pot.value(t), &th, 1e-5);
        for j in 0..2 {
            assert!(crate::model::testutil::rel_err(g[j], fd[j]) < 1e-6);
        }
    }

    #[test]
    fn data_expanded_control_variates_are_refused() {
        let post = poisson_posterior(100, 6);
        let cl = crate::control_variates::kmeans_cluster(post.data(), 5, 1).unwrap();
        let cv = ControlVariates::Data(
            crate::control_variates::DataExpandedCache::build(&post, &cl, TaylorOrder::Second)
                .unwrap(),
        );
        let cfg = EcsConfig {
            hmc: HmcConfig::identity_mass(2, 0.01, 3).unwrap(),
            dependence: Dependence::Independent,
            m: 10,
            variance_gradient: true,
        };
        assert!(matches!(
            hmc_ecs_run(&post, &cv, &cfg, &Theta::from_vec(vec![1.0, 0.7]), 5, 0, 0),
            Err(Error::Unsupported(_))
        ));
    }
}
