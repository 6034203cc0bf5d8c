//! From a validated configuration to sampler runs.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use submcmc::control_variates::{
    kmeans_cluster, posterior_mode, select_expansion_point, ControlVariates, DataExpandedCache,
    ExpansionPoint, ParamExpandedCache,
};
use submcmc::estimators::{
    default_lower_bound, laplace_covariance, laplace_precision, plan_from_pilot, plan_sigma_target,
    BlockPoissonConfig, SubsamplePlan,
};
use submcmc::model::{simulate_poisson, Dataset, Posterior, Theta};
use submcmc::rng::{stream, ChainRng, Purpose};
use submcmc::samplers::{
    default_step_scale, hmc_ecs_run, hmc_run, mh_run, pmmh_run, EcsConfig, HmcConfig, PmmhConfig,
    PmmhEstimator, ProposalConfig, ProposalKind,
};
use submcmc::{ChainTrace, Error, Result};

use crate::config::{
    CvKind, DataSource, EstimatorKind, ExpansionChoice, ExperimentConfig, ProposalChoice,
    SamplerKind, Shape, StartPoint,
};

/// Stream id for pilot work, far above any chain index.
const PLANNING_STREAM: u64 = 1 << 48;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::File(path) => Dataset::load_csv(path),
        DataSource::Simulate {
            n,
            theta,
            seed,
            law,
        } => simulate_poisson(*n, &Theta::from_column_slice(theta), *law, *seed),
    }
}

pub fn posterior(cfg: &ExperimentConfig, data: Dataset) -> Result<Posterior> {
    Posterior::new(cfg.model.build(), Arc::new(data), cfg.prior)
}

/// Everything a sampler needs beyond the configuration itself.
#[derive(Debug, Clone)]
pub struct Setup {
    pub post: Posterior,
    pub cv: ControlVariates,
    /// Expansion point θ⋆ (used for planning even when the control variates
    /// are data-expanded).
    pub theta_star: Theta,
    /// Full-data posterior mode.
    pub mode: Theta,
    pub laplace_cov: DMatrix<f64>,
}

pub fn planning_rng(seed: u64) -> ChainRng {
    stream(seed, PLANNING_STREAM, Purpose::Auxiliary)
}

fn expansion_point(cfg: &ExperimentConfig) -> ExpansionPoint {
    match &cfg.cv_expansion {
        ExpansionChoice::Pilot => ExpansionPoint::PilotMode { seed: cfg.seed },
        ExpansionChoice::Mode => ExpansionPoint::FullMode,
        ExpansionChoice::Given(v) => ExpansionPoint::Given(Theta::from_column_slice(v)),
    }
}

pub fn build_control_variates(
    cfg: &ExperimentConfig,
    post: &Posterior,
    theta_star: &Theta,
) -> Result<ControlVariates> {
    if let Some(path) = &cfg.cv_cache {
        if path.exists() {
            let cv = ControlVariates::load(path)?;
            cv.check_compatible(post)?;
            let matches = match (&cv, cfg.cv_kind) {
                (ControlVariates::Param(c), CvKind::Param) => c.order() == cfg.cv_order,
                (ControlVariates::Data(c), CvKind::Data) => {
                    c.order() == cfg.cv_order && c.k() == cfg.cv_k
                }
                _ => false,
            };
            if !matches {
                return Err(Error::config(
                    "cv.cache",
                    format!(
                        "{} holds different control variates than configured",
                        path.display()
                    ),
                ));
            }
            return Ok(cv);
        }
    }
    let cv = match cfg.cv_kind {
        CvKind::None => ControlVariates::Zero,
        CvKind::Param => ControlVariates::Param(ParamExpandedCache::build(
            post,
            theta_star,
            cfg.cv_order,
            cfg.cv_storage,
        )?),
        CvKind::Data => {
            let clustering = kmeans_cluster(post.data(), cfg.cv_k, cfg.seed)?;
            ControlVariates::Data(DataExpandedCache::build(post, &clustering, cfg.cv_order)?)
        }
    };
    if let Some(path) = &cfg.cv_cache {
        if cfg.cv_kind != CvKind::None {
            cv.save(path)?;
        }
    }
    Ok(cv)
}

/// The configured expansion point θ⋆.
pub fn theta_star(cfg: &ExperimentConfig, post: &Posterior) -> Result<Theta> {
    select_expansion_point(post, &expansion_point(cfg))
}

/// Data, posterior, mode and Laplace covariance; control variates only for
/// the subsampling samplers.
pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    setup_with(cfg, cfg.sampler.uses_subsampling())
}

/// As [`setup`] but always building the configured control variates.
pub fn setup_with_cv(cfg: &ExperimentConfig) -> Result<Setup> {
    setup_with(cfg, true)
}

fn setup_with(cfg: &ExperimentConfig, with_cv: bool) -> Result<Setup> {
    let post = posterior(cfg, load_dataset(cfg)?)?;
    let theta_star = theta_star(cfg, &post)?;
    let cv = if with_cv {
        build_control_variates(cfg, &post, &theta_star)?
    } else {
        ControlVariates::Zero
    };
    let mode = posterior_mode(&post, &theta_star)?;
    let laplace_cov = laplace_covariance(&post, &mode)?;
    Ok(Setup {
        post,
        cv,
        theta_star,
        mode,
        laplace_cov,
    })
}

/// Values derived at run time rather than given in the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    pub theta0: Theta,
    pub kappa: f64,
    pub plan: Option<SubsamplePlan>,
    pub m: Option<usize>,
    pub block_poisson_a: Option<f64>,
}

pub fn proposal(cfg: &ExperimentConfig, setup: &Setup) -> Result<ProposalConfig> {
    let d = setup.post.dim();
    let shape = match cfg.proposal_shape {
        Shape::Identity => DMatrix::identity(d, d),
        Shape::Laplace => setup.laplace_cov.clone(),
    };
    let kind = match cfg.proposal {
        ProposalChoice::RandomWalk => ProposalKind::RandomWalk,
        ProposalChoice::Independence => ProposalKind::Independence {
            center: setup.mode.clone(),
        },
    };
    ProposalConfig::new(
        kind,
        cfg.kappa.unwrap_or_else(|| default_step_scale(d)),
        shape,
    )
}

pub fn hmc_config(cfg: &ExperimentConfig, setup: &Setup) -> Result<HmcConfig> {
    let d = setup.post.dim();
    let mass = match cfg.hmc_mass {
        Shape::Identity => DMatrix::identity(d, d),
        Shape::Laplace => laplace_precision(&setup.post, &setup.mode),
    };
    HmcConfig::new(cfg.hmc_epsilon, cfg.hmc_steps, mass)
}

pub fn start_point(cfg: &ExperimentConfig, setup: &Setup) -> Result<Theta> {
    let theta = match &cfg.theta0 {
        StartPoint::Mode => setup.mode.clone(),
        StartPoint::Expansion => setup.theta_star.clone(),
        StartPoint::Given(v) => Theta::from_column_slice(v),
    };
    if theta.len() != setup.post.dim() {
        return Err(Error::config(
            "theta0",
            format!("expected {} entries, got {}", setup.post.dim(), theta.len()),
        ));
    }
    Ok(theta)
}

/// Pilot plan for the subsample size at the configured target.
pub fn plan(cfg: &ExperimentConfig, setup: &Setup, target: f64) -> Result<SubsamplePlan> {
    plan_from_pilot(
        &setup.post,
        &setup.cv,
        &setup.theta_star,
        target,
        cfg.pilot,
        &mut planning_rng(cfg.seed),
    )
}

/// The same pilot σ²_d re-targeted without drawing again.
pub fn retarget(setup: &Setup, base: &SubsamplePlan, target: f64) -> Result<SubsamplePlan> {
    plan_sigma_target(setup.post.n(), base.sigma2_d, target)
}

pub fn derive(cfg: &ExperimentConfig, setup: &Setup) -> Result<Derived> {
    let theta0 = start_point(cfg, setup)?;
    let kappa = cfg
        .kappa
        .unwrap_or_else(|| default_step_scale(setup.post.dim()));
    let needs_m = match cfg.sampler {
        SamplerKind::Pmmh => cfg.estimator == EstimatorKind::Difference,
        SamplerKind::HmcEcs => true,
        _ => false,
    };
    let (plan, m) = match (needs_m, cfg.m) {
        (false, _) => (None, None),
        (true, Some(m)) => (None, Some(m)),
        (true, None) => {
            let p = plan(cfg, setup, cfg.plan_target)?;
            (Some(p), Some(p.m))
        }
    };
    let block_poisson_a = match (cfg.sampler, cfg.estimator) {
        (SamplerKind::Pmmh, EstimatorKind::BlockPoisson) => Some(match cfg.bp_a {
            Some(a) => a,
            None => default_lower_bound(
                &setup.post,
                &setup.cv,
                &setup.theta_star,
                cfg.bp_lambda,
                cfg.pilot.m,
                &mut stream(cfg.seed, PLANNING_STREAM + 1, Purpose::Auxiliary),
            )?,
        }),
        _ => None,
    };
    Ok(Derived {
        theta0,
        kappa,
        plan,
        m,
        block_poisson_a,
    })
}

pub fn run_chain(
    cfg: &ExperimentConfig,
    setup: &Setup,
    derived: &Derived,
    chain: u64,
) -> Result<ChainTrace> {
    let (post, n_iter, seed) = (&setup.post, cfg.iterations, cfg.seed);
    let theta0 = &derived.theta0;
    match cfg.sampler {
        SamplerKind::Mh => mh_run(post, &proposal(cfg, setup)?, theta0, n_iter, seed, chain),
        SamplerKind::Hmc => hmc_run(post, &hmc_config(cfg, setup)?, theta0, n_iter, seed, chain),
        SamplerKind::Pmmh => {
            let estimator = match cfg.estimator {
                EstimatorKind::Difference => PmmhEstimator::Difference {
                    m: derived.m.expect("m derived for the difference estimator"),
                },
                EstimatorKind::BlockPoisson => PmmhEstimator::BlockPoisson(BlockPoissonConfig {
                    lambda: cfg.bp_lambda,
                    m_b: cfg.bp_m_b,
                    a: derived
                        .block_poisson_a
                        .expect("a derived for Block-Poisson"),
                }),
            };
            let pm = PmmhConfig {
                estimator,
                dependence: cfg.dependence,
                proposal: proposal(cfg, setup)?,
            };
            pmmh_run(post, &setup.cv, &pm, theta0, n_iter, seed, chain)
        }
        SamplerKind::HmcEcs => {
            let ecs = EcsConfig {
                hmc: hmc_config(cfg, setup)?,
                dependence: cfg.dependence,
                m: derived.m.expect("m derived for HMC-ECS"),
                variance_gradient: cfg.variance_gradient,
            };
            hmc_ecs_run(post, &setup.cv, &ecs, theta0, n_iter, seed, chain)
        }
    }
}

/// Runs `cfg.chains` chains concurrently; chain c uses stream id c.
pub fn run_chains(
    cfg: &ExperimentConfig,
    setup: &Setup,
    derived: &Derived,
) -> Result<Vec<ChainTrace>> {
    (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| run_chain(cfg, setup, derived, c))
        .collect()
}
