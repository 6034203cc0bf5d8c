#![allow(dead_code)]

use std::sync::Arc;

use submcmc::control_variates::{
    kmeans_cluster, select_expansion_point, DataExpandedCache, ExpansionPoint, ParamExpandedCache,
    StorageMode,
};
use submcmc::model::{simulate_poisson, CovariateLaw};
use submcmc::{ControlVariates, GaussianPrior, ModelKind, Posterior, TaylorOrder, Theta};

/// Poisson regression with θ = (1, 0.75) and standard normal covariates.
pub fn poisson_example(n: usize, seed: u64) -> Posterior {
    let theta = Theta::from_vec(vec![1.0, 0.75]);
    let data = simulate_poisson(n, &theta, CovariateLaw::StandardNormal, seed).unwrap();
    Posterior::new(
        ModelKind::Poisson.build(),
        Arc::new(data),
        GaussianPrior::default(),
    )
    .unwrap()
}

pub fn pilot_theta_star(post: &Posterior) -> Theta {
    select_expansion_point(post, &ExpansionPoint::PilotMode { seed: 1 }).unwrap()
}

pub fn param_cv(post: &Posterior, theta_star: &Theta, order: TaylorOrder) -> ControlVariates {
    ControlVariates::Param(
        ParamExpandedCache::build(post, theta_star, order, StorageMode::Stored).unwrap(),
    )
}

pub fn data_cv(post: &Posterior, k: usize, order: TaylorOrder) -> ControlVariates {
    let clustering = kmeans_cluster(post.data(), k, 1).unwrap();
    ControlVariates::Data(DataExpandedCache::build(post, &clustering, order).unwrap())
}

/// θ⋆ + r·(0.6, 0.8).
pub fn at_radius(theta_star: &Theta, r: f64) -> Theta {
    theta_star + Theta::from_vec(vec![0.6, 0.8]) * r
}

pub fn diffs(post: &Posterior, cv: &ControlVariates, theta: &Theta) -> Vec<f64> {
    let at = cv.at(post, theta);
    (0..post.n()).map(|i| at.diff(i).unwrap()).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (1/n).
pub fn pop_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (1/(n−1)).
pub fn sample_var(x: &[f64]) -> f64 {
    pop_var(x) * x.len() as f64 / (x.len() - 1) as f64
}

/// Least-squares slope of y on x.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
