//! Datasets, per-observation log-likelihood contributions and the posterior
//! they define.
//!
//! A [`Model`] evaluates ℓ(z | θ) for a single data point z = (y, x) together
//! with derivatives in parameter space (for the parameter-expanded control
//! variates and HMC) and in data space (for the data-expanded control
//! variates). Models are stateless; [`Posterior`] binds one to a dataset and
//! a prior.

mod dataset;
pub mod logistic;
pub mod normal;
pub mod poisson;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use dataset::{simulate_poisson, CovariateLaw, Dataset};
pub use logistic::Logistic;
pub use normal::NormalMean;
pub use poisson::PoissonRegression;

use crate::error::{Error, Result};
use crate::summation::{chunked_sum, chunked_sum_vec};

pub type Theta = DVector<f64>;

pub trait Model: Send + Sync + fmt::Debug {
    fn kind(&self) -> ModelKind;

    /// Parameter dimension for a dataset with `p` covariates.
    fn param_dim(&self, p: usize) -> usize;

    fn check_response(&self, y: f64) -> Result<()>;

    fn loglik_at(&self, theta: &Theta, y: f64, x: &[f64]) -> f64;

    /// Adds `scale * ∇_θ ℓ` into `out`.
    fn add_grad_theta(&self, theta: &Theta, y: f64, x: &[f64], scale: f64, out: &mut [f64]);

    /// Adds `scale * ∇²_θ ℓ` into `out`.
    fn add_hess_theta(&self, theta: &Theta, y: f64, x: &[f64], scale: f64, out: &mut DMatrix<f64>);

    /// Gradient and Hessian of ℓ(z | θ) with respect to z = (y, x), at an
    /// arbitrary (possibly non-observed) data point.
    fn data_derivatives(&self, theta: &Theta, z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)>;

    fn loglik_point(&self, theta: &Theta, z: &[f64]) -> f64 {
        self.loglik_at(theta, z[0], &z[1..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Poisson,
    Logistic,
    NormalMean,
}

impl ModelKind {
    pub fn build(self) -> Arc<dyn Model> {
        match self {
            ModelKind::Poisson => Arc::new(PoissonRegression),
            ModelKind::Logistic => Arc::new(Logistic),
            ModelKind::NormalMean => Arc::new(NormalMean),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Poisson => "poisson",
            ModelKind::Logistic => "logistic",
            ModelKind::NormalMean => "normal",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(ModelKind::Poisson),
            "logistic" => Ok(ModelKind::Logistic),
            "normal" | "normal_mean" => Ok(ModelKind::NormalMean),
            other => Err(Error::config("model", format!("unknown model {other:?}"))),
        }
    }
}

/// w = (1, x) · θ for the GLMs.
pub(crate) fn linear_predictor(theta: &Theta, x: &[f64]) -> f64 {
    let mut eta = theta[0];
    for (j, xj) in x.iter().enumerate() {
        eta += theta[j + 1] * xj;
    }
    eta
}

/// Independent N(mean, sd²) on every coordinate of θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrior {
    pub mean: f64,
    pub sd: f64,
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self {
            mean: 0.0,
            sd: 10.0,
        }
    }
}

impl GaussianPrior {
    pub fn log_density(&self, theta: &Theta) -> f64 {
        let norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - self.sd.ln();
        theta
            .iter()
            .map(|t| norm - 0.5 * ((t - self.mean) / self.sd).powi(2))
            .sum()
    }

    pub fn grad(&self, theta: &Theta) -> Theta {
        theta.map(|t| -(t - self.mean) / (self.sd * self.sd))
    }

    /// Diagonal of the (constant) Hessian.
    pub fn hess_diag(&self) -> f64 {
        -1.0 / (self.sd * self.sd)
    }
}

/// A model bound to a dataset and a prior.
#[derive(Debug, Clone)]
pub struct Posterior {
    model: Arc<dyn Model>,
    data: Arc<Dataset>,
    prior: GaussianPrior,
    dim: usize,
}

impl Posterior {
    pub fn new(model: Arc<dyn Model>, data: Arc<Dataset>, prior: GaussianPrior) -> Result<Self> {
        for (i, &y) in data.ys().iter().enumerate() {
            model.check_response(y).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("observation {i}: {msg}")),
                other => other,
            })?;
        }
        if !(prior.sd > 0.0) || !prior.mean.is_finite() {
            return Err(Error::config(
                "prior.sd",
                "prior standard deviation must be positive",
            ));
        }
        let dim = model.param_dim(data.p());
        Ok(Self {
            model,
            data,
            prior,
            dim,
        })
    }

    pub fn model_arc(&self) -> Arc<dyn Model> {
        Arc::clone(&self.model)
    }

    pub fn model(&self) -> &dyn Model {
        self.model.as_ref()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn data_arc(&self) -> Arc<Dataset> {
        Arc::clone(&self.data)
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn loglik_i(&self, theta: &Theta, i: usize) -> f64 {
        self.model
            .loglik_at(theta, self.data.y(i), self.data.row(i))
    }

    pub fn add_grad_i(&self, theta: &Theta, i: usize, scale: f64, out: &mut [f64]) {
        self.model
            .add_grad_theta(theta, self.data.y(i), self.data.row(i), scale, out)
    }

    pub fn grad_i(&self, theta: &Theta, i: usize) -> Theta {
        let mut g = Theta::zeros(self.dim);
        self.add_grad_i(theta, i, 1.0, g.as_mut_slice());
        g
    }

    pub fn hess_i(&self, theta: &Theta, i: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        self.model
            .add_hess_theta(theta, self.data.y(i), self.data.row(i), 1.0, &mut h);
        h
    }

    /// Full-data log-likelihood Σ ℓ_i(θ).
    pub fn loglik(&self, theta: &Theta) -> f64 {
        chunked_sum(self.n(), |i| self.loglik_i(theta, i))
    }

    pub fn grad_loglik(&self, theta: &Theta) -> Theta {
        Theta::from_vec(chunked_sum_vec(self.n(), self.dim, |i, out| {
            self.add_grad_i(theta, i, 1.0, out)
        }))
    }

    pub fn hess_loglik(&self, theta: &Theta) -> DMatrix<f64> {
        let d = self.dim;
        let flat = chunked_sum_vec(self.n(), d * d, |i, out| {
            let mut h = DMatrix::zeros(d, d);
            self.model
                .add_hess_theta(theta, self.data.y(i), self.data.row(i), 1.0, &mut h);
            out.iter_mut().zip(h.iter()).for_each(|(o, v)| *o += v);
        });
        DMatrix::from_vec(d, d, flat)
    }

    pub fn log_prior(&self, theta: &Theta) -> f64 {
        self.prior.log_density(theta)
    }

    pub fn log_posterior(&self, theta: &Theta) -> f64 {
        self.loglik(theta) + self.log_prior(theta)
    }
}
