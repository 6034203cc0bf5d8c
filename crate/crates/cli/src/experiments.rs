//! The computations behind the figure subcommands, free of file handling.

use rand_distr::{Distribution, StandardNormal};
use submcmc::control_variates::{
    kmeans_cluster, ControlVariates, DataExpandedCache, ParamExpandedCache, StorageMode,
    TaylorOrder,
};
use submcmc::diagnostics::{acf, ct, iact, mc_standard_error, IactEstimate, IactMethod};
use submcmc::estimators::Dependence;
use submcmc::estimators::{
    optimal_m_srs_wor, plan_sigma_target, sampling_fraction_srs_wor, PlanningInputs,
};
use submcmc::model::{Posterior, Theta};
use submcmc::rng::{stream, Purpose};
use submcmc::samplers::{mh_run, pmmh_run, PmmhConfig, PmmhEstimator, ProposalConfig};
use submcmc::{ChainTrace, Result};

use crate::config::{CvKind, Figure1Settings, Figure234Settings, Figure5Settings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Figure1Row {
    pub sigma2_pop: f64,
    pub n: usize,
    pub target: f64,
    pub m_opt: usize,
    /// nσ²/(nσ² + target), the unrounded optimal fraction.
    pub fraction: f64,
}

/// Optimal without-replacement sampling fractions over an n grid.
pub fn figure1(s: &Figure1Settings) -> Vec<Figure1Row> {
    let mut rows = Vec::with_capacity(s.sigma2.len() * s.n_grid.len());
    for &sigma2_pop in &s.sigma2 {
        for &n in &s.n_grid {
            let p = PlanningInputs::new(n, sigma2_pop, s.target);
            rows.push(Figure1Row {
                sigma2_pop,
                n,
                target: s.target,
                m_opt: optimal_m_srs_wor(&p),
                fraction: sampling_fraction_srs_wor(&p),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub id: usize,
    pub cv: CvKind,
    /// Centroid count for data-expanded panels.
    pub k: Option<usize>,
    pub order: TaylorOrder,
    pub radius: f64,
    pub theta: Theta,
    /// Population variance of d_i = ℓ_i − q_i (1/n normalisation).
    pub sigma2_d: f64,
    /// 1 − σ²_d / σ²_ℓ: the share of the spread of ℓ_i the control variate explains.
    pub r2: f64,
    /// With-replacement m giving n²σ²_d/m ≤ target.
    pub m_opt: usize,
    pub ell: Vec<f64>,
    pub q: Vec<f64>,
}

fn pop_variance(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in x.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    x.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// One point θ⋆ + r·v per radius, with v uniform on the unit sphere.
pub fn sphere_points(theta_star: &Theta, radii: &[f64], seed: u64) -> Vec<Theta> {
    let mut rng = stream(seed, 1, Purpose::Auxiliary);
    radii
        .iter()
        .map(|&r| {
            let v = Theta::from_iterator(
                theta_star.len(),
                (0..theta_star.len()).map(|_| StandardNormal.sample(&mut rng)),
            );
            theta_star + v.normalize() * r
        })
        .collect()
}

fn panel(
    id: usize,
    post: &Posterior,
    cv: &ControlVariates,
    (kind, k, order, radius): (CvKind, Option<usize>, TaylorOrder, f64),
    theta: &Theta,
    target: f64,
) -> Result<Panel> {
    let at = cv.at(post, theta);
    let n = post.n();
    let ell: Vec<f64> = (0..n).map(|i| post.loglik_i(theta, i)).collect();
    let q: Vec<f64> = (0..n).map(|i| at.q(i)).collect();
    let sigma2_d = pop_variance(ell.iter().zip(&q).map(|(l, q)| l - q));
    let sigma2_l = pop_variance(ell.iter().copied());
    Ok(Panel {
        id,
        cv: kind,
        k,
        order,
        radius,
        theta: theta.clone(),
        sigma2_d,
        r2: 1.0 - sigma2_d / sigma2_l,
        m_opt: plan_sigma_target(n, sigma2_d, target)?.m,
        ell,
        q,
    })
}

/// Scatter data of ℓ_i against q_i for every (control variate, K, order,
/// radius) combination, all at the same θ per radius.
pub fn figure234(
    post: &Posterior,
    theta_star: &Theta,
    s: &Figure234Settings,
    seed: u64,
) -> Result<Vec<Panel>> {
    let thetas = sphere_points(theta_star, &s.radii, seed);
    let mut panels = Vec::new();
    for &kind in &s.cv {
        let ks: Vec<Option<usize>> = match kind {
            CvKind::Data => s.k.iter().copied().map(Some).collect(),
            _ => vec![None],
        };
        for k in ks {
            let clustering = match k {
                Some(k) => Some(kmeans_cluster(post.data(), k, seed)?),
                None => None,
            };
            for &order in &s.orders {
                let cv = match (kind, &clustering) {
                    (CvKind::None, _) => ControlVariates::Zero,
                    (CvKind::Param, _) => ControlVariates::Param(ParamExpandedCache::build(
                        post,
                        theta_star,
                        order,
                        StorageMode::Stored,
                    )?),
                    (CvKind::Data, Some(c)) => {
                        ControlVariates::Data(DataExpandedCache::build(post, c, order)?)
                    }
                    (CvKind::Data, None) => unreachable!("clustered above"),
                };
                for (&radius, theta) in s.radii.iter().zip(&thetas) {
                    let id = panels.len();
                    panels.push(panel(
                        id,
                        post,
                        &cv,
                        (kind, k, order, radius),
                        theta,
                        s.target,
                    )?);
                }
            }
        }
    }
    Ok(panels)
}

#[derive(Debug, Clone)]
pub struct Figure5Run {
    /// Target Var(ℓ̂); zero is the full-data chain.
    pub target: f64,
    /// Subsample size, `None` for the full-data chain.
    pub m: Option<usize>,
    pub trace: ChainTrace,
    /// Per coordinate, ρ_0..ρ_L after burn-in.
    pub acf: Vec<Vec<f64>>,
    pub iact: Vec<IactEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure5Row {
    pub target: f64,
    pub m: Option<usize>,
    pub coordinate: usize,
    pub mean: f64,
    pub sd: f64,
    pub iact: f64,
    pub mcse: f64,
    pub accept_rate: f64,
    pub evaluations_per_iter: f64,
    pub ct: f64,
}

/// Inputs shared by every rung of the variance ladder.
pub struct Figure5Inputs<'a> {
    pub post: &'a Posterior,
    pub cv: &'a ControlVariates,
    pub proposal: &'a ProposalConfig,
    pub theta0: &'a Theta,
    /// Pilot estimate of σ²_d.
    pub sigma2_d: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub method: IactMethod,
}

/// Full-data MH for target 0 and PMMH with m planned for each positive
/// target. All rungs share the θ-side random stream.
pub fn figure5(inp: &Figure5Inputs<'_>, s: &Figure5Settings) -> Result<Vec<Figure5Run>> {
    let mut runs = Vec::with_capacity(s.targets.len());
    for &target in &s.targets {
        let (m, trace) = if target == 0.0 {
            (
                None,
                mh_run(
                    inp.post,
                    inp.proposal,
                    inp.theta0,
                    inp.iterations,
                    inp.seed,
                    0,
                )?,
            )
        } else {
            let m = plan_sigma_target(inp.post.n(), inp.sigma2_d, target)?.m;
            let cfg = PmmhConfig {
                estimator: PmmhEstimator::Difference { m },
                dependence: Dependence::Independent,
                proposal: inp.proposal.clone(),
            };
            (
                Some(m),
                pmmh_run(
                    inp.post,
                    inp.cv,
                    &cfg,
                    inp.theta0,
                    inp.iterations,
                    inp.seed,
                    0,
                )?,
            )
        };
        let mut acfs = Vec::with_capacity(trace.dim());
        let mut iacts = Vec::with_capacity(trace.dim());
        for j in 0..trace.dim() {
            let x = trace.coordinate(j, inp.burn_in);
            acfs.push(acf(&x, s.acf_lags)?);
            iacts.push(iact(&x, inp.method, 0)?);
        }
        runs.push(Figure5Run {
            target,
            m,
            trace,
            acf: acfs,
            iact: iacts,
        });
    }
    Ok(runs)
}

pub fn figure5_table(runs: &[Figure5Run], burn_in: usize) -> Vec<Figure5Row> {
    let mut rows = Vec::new();
    for run in runs {
        let per_iter = run.trace.evaluations as f64 / run.trace.len() as f64;
        for (j, est) in run.iact.iter().enumerate() {
            let x = run.trace.coordinate(j, burn_in);
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let sd =
                (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt();
            rows.push(Figure5Row {
                target: run.target,
                m: run.m,
                coordinate: j + 1,
                mean,
                sd,
                iact: est.value,
                mcse: mc_standard_error(&x, est.value),
                accept_rate: run.trace.acceptance_rate(burn_in),
                evaluations_per_iter: per_iter,
                ct: ct(est.value, per_iter),
            });
        }
    }
    rows
}
