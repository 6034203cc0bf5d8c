use nalgebra::{DMatrix, DVector};

use super::{CentroidTerm, Clustering, TaylorOrder};
use crate::error::{Error, Result};
use crate::model::{Posterior, Theta};

/// Taylor expansion of ℓ(z_i | θ) in data space around the centroid nearest
/// to z_i.
///
/// Per centroid the cache keeps the member count n_c, the first moment
/// S1_c = Σ (z_i − z_c) and the second moment S2_c = Σ (z_i − z_c)(z_i −
/// z_c)ᵀ, so Σ_i q_i(θ) = Σ_c n_c ℓ(z_c) + ∇ℓ(z_c)·S1_c + ½⟨∇²ℓ(z_c), S2_c⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct DataExpandedCache {
    pub(crate) order: TaylorOrder,
    pub(crate) n: usize,
    pub(crate) dim: usize,
    /// K × dim, row-major
    pub(crate) centroids: Vec<f64>,
    pub(crate) assignment: Vec<usize>,
    pub(crate) counts: Vec<usize>,
    /// K × dim
    pub(crate) first_moments: Vec<f64>,
    /// K × dim × dim
    pub(crate) second_moments: Vec<f64>,
}

impl DataExpandedCache {
    pub fn build(post: &Posterior, clustering: &Clustering, order: TaylorOrder) -> Result<Self> {
        let data = post.data();
        let n = data.n();
        let dim = data.p() + 1;
        if clustering.dim() != dim || clustering.assignment().len() != n {
            return Err(Error::Domain(format!(
                "clustering covers {} points of dimension {}; dataset has {n} of dimension {dim}",
                clustering.assignment().len(),
                clustering.dim()
            )));
        }
        let k = clustering.k();
        for c in 0..k {
            let z = clustering.centroid(c);
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "centroid",
                    index: c,
                });
            }
            if order > TaylorOrder::Zero {
                let probe = Theta::zeros(post.dim());
                post.model()
                    .data_derivatives(&probe, z)
                    .map_err(|e| Error::Domain(format!("centroid {c}: {e}")))?;
            }
        }
        let mut counts = vec![0usize; k];
        let mut first_moments = vec![0.0; k * dim];
        let mut second_moments = vec![0.0; k * dim * dim];
        for i in 0..n {
            let c = clustering.assignment()[i];
            let z = data.z(i);
            let dev: Vec<f64> = z
                .iter()
                .zip(clustering.centroid(c))
                .map(|(a, b)| a - b)
                .collect();
            counts[c] += 1;
            for a in 0..dim {
                first_moments[c * dim + a] += dev[a];
                for b in 0..dim {
                    second_moments[(c * dim + a) * dim + b] += dev[a] * dev[b];
                }
            }
        }
        Ok(Self {
            order,
            n,
            dim,
            centroids: clustering.centroids().to_vec(),
            assignment: clustering.assignment().to_vec(),
            counts,
            first_moments,
            second_moments,
        })
    }

    pub fn order(&self) -> TaylorOrder {
        self.order
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn data_dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn count(&self, c: usize) -> usize {
        self.counts[c]
    }

    pub fn first_moment(&self, c: usize) -> &[f64] {
        &self.first_moments[c * self.dim..(c + 1) * self.dim]
    }

    pub fn second_moment(&self, c: usize) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_row_slice(d, d, &self.second_moments[c * d * d..(c + 1) * d * d])
    }

    fn centroid_term(&self, post: &Posterior, theta: &Theta, c: usize) -> CentroidTerm {
        let z = self.centroid(c);
        let ell = post.model().loglik_point(theta, z);
        let (grad, hess) = if self.order > TaylorOrder::Zero {
            post.model()
                .data_derivatives(theta, z)
                .expect("centroid domain checked at build time")
        } else {
            (DVector::zeros(self.dim), DMatrix::zeros(self.dim, self.dim))
        };
        CentroidTerm { ell, grad, hess }
    }

    pub(crate) fn centroid_terms(&self, post: &Posterior, theta: &Theta) -> Vec<CentroidTerm> {
        (0..self.k())
            .map(|c| self.centroid_term(post, theta, c))
            .collect()
    }

    pub(crate) fn sum_q_from_terms(&self, terms: &[CentroidTerm]) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for (c, t) in terms.iter().enumerate() {
            let mut s = self.counts[c] as f64 * t.ell;
            if self.order >= TaylorOrder::First {
                s += t
                    .grad
                    .iter()
                    .zip(self.first_moment(c))
                    .map(|(g, m)| g * m)
                    .sum::<f64>();
            }
            if self.order >= TaylorOrder::Second {
                let m2 = &self.second_moments[c * d * d..(c + 1) * d * d];
                let mut inner = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        inner += t.hess[(a, b)] * m2[a * d + b];
                    }
                }
                s += 0.5 * inner;
            }
            total += s;
        }
        total
    }

    pub fn sum_q(&self, post: &Posterior, theta: &Theta) -> f64 {
        self.sum_q_from_terms(&self.centroid_terms(post, theta))
    }

    fn q_with(&self, post: &Posterior, term: &CentroidTerm, c: usize, i: usize) -> f64 {
        let mut q = term.ell;
        if self.order == TaylorOrder::Zero {
            return q;
        }
        let zc = self.centroid(c);
        let data = post.data();
        let y = data.y(i);
        let x = data.row(i);
        let dev = |a: usize| if a == 0 { y - zc[0] } else { x[a - 1] - zc[a] };
        let second = self.order >= TaylorOrder::Second;
        for a in 0..self.dim {
            let da = dev(a);
            q += term.grad[a] * da;
            if second {
                q += 0.5 * term.hess[(a, a)] * da * da;
                for b in a + 1..self.dim {
                    q += term.hess[(a, b)] * da * dev(b);
                }
            }
        }
        q
    }

    pub(crate) fn q_from_terms(&self, post: &Posterior, terms: &[CentroidTerm], i: usize) -> f64 {
        let c = self.assignment[i];
        self.q_with(post, &terms[c], c, i)
    }

    pub fn q(&self, post: &Posterior, theta: &Theta, i: usize) -> f64 {
        let c = self.assignment[i];
        self.q_with(post, &self.centroid_term(post, theta, c), c, i)
    }
}
