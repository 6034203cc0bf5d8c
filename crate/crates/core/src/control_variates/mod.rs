//! Control variates q_i(θ) ≈ ℓ_i(θ) for the difference estimator.
//!
//! Two families are provided: Taylor expansions in parameter space around a
//! fixed θ⋆ ([`ParamExpandedCache`]) and Taylor expansions in data space
//! around the nearest k-means centroid ([`DataExpandedCache`]). Both
//! precompute aggregates so that Σ_i q_i(θ) costs O(d²) or O(K·dim(z)²)
//! instead of O(n). The degenerate choices q_i = 0 (plain simple random
//! sampling) and q_i = ℓ_i (zero-variance oracle) are available too.

mod data;
mod expansion;
mod io;
mod kmeans;
mod param;

use std::fmt;

use nalgebra::{DMatrix, DVector};

pub use data::DataExpandedCache;
pub use expansion::{
    newton_steps, pilot_size, posterior_mode, select_expansion_point, ExpansionPoint,
};
pub use kmeans::{kmeans_cluster, Clustering};
pub use param::{ParamExpandedCache, StorageMode};

use crate::error::{Error, Result};
use crate::model::{Posterior, Theta};

/// Number of Taylor terms beyond the constant one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TaylorOrder {
    Zero = 0,
    First = 1,
    Second = 2,
}

impl TaylorOrder {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(TaylorOrder::Zero),
            1 => Ok(TaylorOrder::First),
            2 => Ok(TaylorOrder::Second),
            _ => Err(Error::config(
                "cv.order",
                format!("order must be 0, 1 or 2, got {v}"),
            )),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for TaylorOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone)]
pub enum ControlVariates {
    /// q_i = 0: the difference estimator reduces to the SRS total estimator.
    Zero,
    /// q_i = ℓ_i: all differences vanish. Σq costs a full data pass.
    Exact,
    Param(ParamExpandedCache),
    Data(DataExpandedCache),
}

impl ControlVariates {
    pub fn label(&self) -> &'static str {
        match self {
            ControlVariates::Zero => "none",
            ControlVariates::Exact => "exact",
            ControlVariates::Param(_) => "param",
            ControlVariates::Data(_) => "data",
        }
    }

    /// Fails unless the cache was built over a population like `post`'s.
    pub fn check_compatible(&self, post: &Posterior) -> Result<()> {
        let (n, d) = match self {
            ControlVariates::Zero | ControlVariates::Exact => return Ok(()),
            ControlVariates::Param(c) => (c.n(), c.theta_star().len()),
            ControlVariates::Data(c) => (c.n(), c.data_dim()),
        };
        let want_d = match self {
            ControlVariates::Data(_) => post.data().p() + 1,
            _ => post.dim(),
        };
        if n != post.n() || d != want_d {
            return Err(Error::Domain(format!(
                "control variate cache built for n={n}, dim={d}; dataset has n={}, dim={want_d}",
                post.n()
            )));
        }
        Ok(())
    }

    /// Precomputes everything needed to evaluate q at `theta`.
    pub fn at<'a>(&'a self, post: &'a Posterior, theta: &Theta) -> CvAt<'a> {
        let centroid_terms = match self {
            ControlVariates::Data(c) => c.centroid_terms(post, theta),
            _ => Vec::new(),
        };
        let sum_q = match self {
            ControlVariates::Zero => 0.0,
            ControlVariates::Exact => post.loglik(theta),
            ControlVariates::Param(c) => c.sum_q(theta),
            ControlVariates::Data(c) => c.sum_q_from_terms(&centroid_terms),
        };
        let delta = match self {
            ControlVariates::Param(c) => theta - c.theta_star(),
            _ => Theta::zeros(0),
        };
        CvAt {
            cv: self,
            post,
            theta: theta.clone(),
            delta,
            centroid_terms,
            sum_q,
        }
    }

    pub fn q(&self, post: &Posterior, theta: &Theta, i: usize) -> f64 {
        match self {
            ControlVariates::Zero => 0.0,
            ControlVariates::Exact => post.loglik_i(theta, i),
            ControlVariates::Param(c) => c.q(post, theta, i),
            ControlVariates::Data(c) => c.q(post, theta, i),
        }
    }

    pub fn sum_q(&self, post: &Posterior, theta: &Theta) -> f64 {
        match self {
            ControlVariates::Zero => 0.0,
            ControlVariates::Exact => post.loglik(theta),
            ControlVariates::Param(c) => c.sum_q(theta),
            ControlVariates::Data(c) => c.sum_q(post, theta),
        }
    }

    /// d_i(θ) = ℓ_i(θ) − q_i(θ).
    pub fn diff(&self, post: &Posterior, theta: &Theta, i: usize) -> Result<f64> {
        if i >= post.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: post.n(),
            });
        }
        Ok(post.loglik_i(theta, i) - self.q(post, theta, i))
    }

    pub fn supports_theta_gradient(&self) -> bool {
        !matches!(self, ControlVariates::Data(_))
    }

    /// Adds `scale * ∇_θ q_i(θ)` into `out`.
    pub fn add_grad_q(
        &self,
        post: &Posterior,
        theta: &Theta,
        i: usize,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        match self {
            ControlVariates::Zero => Ok(()),
            ControlVariates::Exact => {
                post.add_grad_i(theta, i, scale, out);
                Ok(())
            }
            ControlVariates::Param(c) => {
                c.add_grad_q(post, theta, i, scale, out);
                Ok(())
            }
            ControlVariates::Data(_) => Err(unsupported_gradient()),
        }
    }

    /// ∇_θ Σ_i q_i(θ).
    pub fn grad_sum_q(&self, post: &Posterior, theta: &Theta) -> Result<Theta> {
        match self {
            ControlVariates::Zero => Ok(Theta::zeros(post.dim())),
            ControlVariates::Exact => Ok(post.grad_loglik(theta)),
            ControlVariates::Param(c) => Ok(c.grad_sum_q(theta)),
            ControlVariates::Data(_) => Err(unsupported_gradient()),
        }
    }
}

fn unsupported_gradient() -> Error {
    Error::Unsupported(
        "θ-gradients of data-expanded control variates need mixed data/parameter derivatives; use parameter-expanded control variates".into(),
    )
}

/// Control variates evaluated at a fixed θ.
pub struct CvAt<'a> {
    cv: &'a ControlVariates,
    post: &'a Posterior,
    theta: Theta,
    /// θ − θ⋆ for parameter-expanded control variates
    delta: Theta,
    centroid_terms: Vec<CentroidTerm>,
    sum_q: f64,
}

/// ℓ, ∇_z ℓ and ∇²_z ℓ at one centroid.
#[derive(Debug, Clone)]
pub(crate) struct CentroidTerm {
    pub ell: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl CvAt<'_> {
    pub fn n(&self) -> usize {
        self.post.n()
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn sum_q(&self) -> f64 {
        self.sum_q
    }

    pub fn q(&self, i: usize) -> f64 {
        match self.cv {
            ControlVariates::Data(c) => c.q_from_terms(self.post, &self.centroid_terms, i),
            ControlVariates::Param(c) => c.q_delta(self.post, self.delta.as_slice(), i),
            other => other.q(self.post, &self.theta, i),
        }
    }

    pub fn diff(&self, i: usize) -> Result<f64> {
        if i >= self.post.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.post.n(),
            });
        }
        Ok(self.post.loglik_i(&self.theta, i) - self.q(i))
    }
}
