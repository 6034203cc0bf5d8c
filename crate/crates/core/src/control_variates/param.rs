use nalgebra::DMatrix;
use rayon::prelude::*;

use super::TaylorOrder;
use crate::error::{Error, Result};
use crate::model::{Posterior, Theta};
use crate::summation::{chunked_sum, chunked_sum_vec};

/// Whether per-observation expansion ingredients are kept in memory.
///
/// `Stored` costs `8 · n · (1 + d + d(d+1)/2)` bytes; `Recompute`
/// re-evaluates ℓ_i, ∇ℓ_i and ∇²ℓ_i at θ⋆ whenever a sampled q_i is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StorageMode {
    #[default]
    Stored,
    Recompute,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PerObservation {
    pub ell: Vec<f64>,
    /// n × d, row-major
    pub grad: Vec<f64>,
    /// n × d(d+1)/2, packed upper triangle in row order
    pub hess: Vec<f64>,
}

/// Taylor expansion of every ℓ_i around a common θ⋆.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamExpandedCache {
    pub(crate) theta_star: Theta,
    pub(crate) order: TaylorOrder,
    pub(crate) n: usize,
    pub(crate) sum_ell: f64,
    pub(crate) sum_grad: Theta,
    pub(crate) sum_hess: DMatrix<f64>,
    pub(crate) per_obs: Option<PerObservation>,
}

pub(crate) fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn pack(h: &DMatrix<f64>, out: &mut [f64]) {
    let d = h.nrows();
    let mut k = 0;
    for a in 0..d {
        for b in a..d {
            out[k] = h[(a, b)];
            k += 1;
        }
    }
}

/// ½ Δᵀ H Δ for a packed upper triangle.
fn half_quadratic_packed(packed: &[f64], delta: &[f64]) -> f64 {
    let d = delta.len();
    let mut k = 0;
    let mut acc = 0.0;
    for a in 0..d {
        acc += 0.5 * packed[k] * delta[a] * delta[a];
        k += 1;
        for b in a + 1..d {
            acc += packed[k] * delta[a] * delta[b];
            k += 1;
        }
    }
    acc
}

/// Adds H Δ for a packed upper triangle.
fn add_packed_times(packed: &[f64], delta: &[f64], scale: f64, out: &mut [f64]) {
    let d = delta.len();
    let mut k = 0;
    for a in 0..d {
        out[a] += scale * packed[k] * delta[a];
        k += 1;
        for b in a + 1..d {
            out[a] += scale * packed[k] * delta[b];
            out[b] += scale * packed[k] * delta[a];
            k += 1;
        }
    }
}

fn check_finite(v: &[f64], index: usize, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what, index })
    }
}

impl ParamExpandedCache {
    /// One pass over the data at θ⋆.
    pub fn build(
        post: &Posterior,
        theta_star: &Theta,
        order: TaylorOrder,
        storage: StorageMode,
    ) -> Result<Self> {
        let n = post.n();
        let d = post.dim();
        if theta_star.len() != d {
            return Err(Error::Domain(format!(
                "θ⋆ has {} entries, model needs {d}",
                theta_star.len()
            )));
        }
        let tri = packed_len(d);
        let ts = theta_star;
        match storage {
            StorageMode::Stored => {
                let mut ell = vec![0.0; n];
                let mut grad = vec![0.0; n * d];
                let mut hess = vec![0.0; n * tri];
                ell.par_iter_mut()
                    .zip(grad.par_chunks_mut(d))
                    .zip(hess.par_chunks_mut(tri))
                    .enumerate()
                    .for_each(|(i, ((l, g), h))| {
                        *l = post.loglik_i(ts, i);
                        post.add_grad_i(ts, i, 1.0, g);
                        pack(&post.hess_i(ts, i), h);
                    });
                for i in 0..n {
                    check_finite(&[ell[i]], i, "log-likelihood at θ⋆")?;
                    check_finite(&grad[i * d..(i + 1) * d], i, "gradient at θ⋆")?;
                    check_finite(&hess[i * tri..(i + 1) * tri], i, "Hessian at θ⋆")?;
                }
                let sum_ell = chunked_sum(n, |i| ell[i]);
                let sum_grad = Theta::from_vec(chunked_sum_vec(n, d, |i, out| {
                    out.iter_mut()
                        .zip(&grad[i * d..(i + 1) * d])
                        .for_each(|(o, g)| *o += g)
                }));
                let packed_sum = chunked_sum_vec(n, tri, |i, out| {
                    out.iter_mut()
                        .zip(&hess[i * tri..(i + 1) * tri])
                        .for_each(|(o, h)| *o += h)
                });
                Ok(Self {
                    theta_star: ts.clone(),
                    order,
                    n,
                    sum_ell,
                    sum_grad,
                    sum_hess: unpack(&packed_sum, d),
                    per_obs: Some(PerObservation { ell, grad, hess }),
                })
            }
            StorageMode::Recompute => {
                if let Some(i) = (0..n).find(|&i| {
                    !post.loglik_i(ts, i).is_finite()
                        || !post.grad_i(ts, i).iter().all(|v| v.is_finite())
                        || !post.hess_i(ts, i).iter().all(|v| v.is_finite())
                }) {
                    return Err(Error::NonFinite {
                        what: "expansion term at θ⋆",
                        index: i,
                    });
                }
                let sum_ell = post.loglik(ts);
                let sum_grad = post.grad_loglik(ts);
                let mut sum_hess = post.hess_loglik(ts);
                // symmetrize exactly
                sum_hess = (&sum_hess + sum_hess.transpose()) * 0.5;
                Ok(Self {
                    theta_star: ts.clone(),
                    order,
                    n,
                    sum_ell,
                    sum_grad,
                    sum_hess,
                    per_obs: None,
                })
            }
        }
    }

    pub fn theta_star(&self) -> &Theta {
        &self.theta_star
    }

    pub fn order(&self) -> TaylorOrder {
        self.order
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn storage(&self) -> StorageMode {
        if self.per_obs.is_some() {
            StorageMode::Stored
        } else {
            StorageMode::Recompute
        }
    }

    pub fn sum_ell(&self) -> f64 {
        self.sum_ell
    }

    pub fn sum_grad(&self) -> &Theta {
        &self.sum_grad
    }

    pub fn sum_hess(&self) -> &DMatrix<f64> {
        &self.sum_hess
    }

    /// Stored per-observation (ℓ_i, ∇ℓ_i, packed ∇²ℓ_i) at θ⋆, if kept.
    pub fn stored_terms(&self, i: usize) -> Option<(f64, &[f64], &[f64])> {
        let p = self.per_obs.as_ref()?;
        let d = self.theta_star.len();
        let tri = packed_len(d);
        Some((
            p.ell[i],
            &p.grad[i * d..(i + 1) * d],
            &p.hess[i * tri..(i + 1) * tri],
        ))
    }

    fn terms(&self, post: &Posterior, i: usize) -> (f64, Vec<f64>, Vec<f64>) {
        match self.stored_terms(i) {
            Some((l, g, h)) => (l, g.to_vec(), h.to_vec()),
            None => {
                let ts = &self.theta_star;
                let mut h = vec![0.0; packed_len(ts.len())];
                pack(&post.hess_i(ts, i), &mut h);
                (
                    post.loglik_i(ts, i),
                    post.grad_i(ts, i).as_slice().to_vec(),
                    h,
                )
            }
        }
    }

    fn q_from(&self, ell: f64, grad: &[f64], hess: &[f64], delta: &[f64]) -> f64 {
        let mut q = ell;
        if self.order >= TaylorOrder::First {
            q += grad.iter().zip(delta).map(|(g, x)| g * x).sum::<f64>();
        }
        if self.order >= TaylorOrder::Second {
            q += half_quadratic_packed(hess, delta);
        }
        q
    }

    pub fn q(&self, post: &Posterior, theta: &Theta, i: usize) -> f64 {
        self.q_delta(post, (theta - &self.theta_star).as_slice(), i)
    }

    /// q_i at θ⋆ + Δ.
    pub(crate) fn q_delta(&self, post: &Posterior, delta: &[f64], i: usize) -> f64 {
        match self.stored_terms(i) {
            Some((l, g, h)) => self.q_from(l, g, h, delta),
            None => {
                let (l, g, h) = self.terms(post, i);
                self.q_from(l, &g, &h, delta)
            }
        }
    }

    /// Σ_i q_i(θ) from the aggregates; cost independent of n.
    pub fn sum_q(&self, theta: &Theta) -> f64 {
        let delta = theta - &self.theta_star;
        let mut s = self.sum_ell;
        if self.order >= TaylorOrder::First {
            s += self.sum_grad.dot(&delta);
        }
        if self.order >= TaylorOrder::Second {
            s += 0.5 * (delta.transpose() * &self.sum_hess * &delta)[(0, 0)];
        }
        s
    }

    pub fn add_grad_q(
        &self,
        post: &Posterior,
        theta: &Theta,
        i: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        if self.order == TaylorOrder::Zero {
            return;
        }
        let delta = theta - &self.theta_star;
        let apply = |g: &[f64], h: &[f64], out: &mut [f64]| {
            out.iter_mut().zip(g).for_each(|(o, gi)| *o += scale * gi);
            if self.order >= TaylorOrder::Second {
                add_packed_times(h, delta.as_slice(), scale, out);
            }
        };
        match self.stored_terms(i) {
            Some((_, g, h)) => apply(g, h, out),
            None => {
                let (_, g, h) = self.terms(post, i);
                apply(&g, &h, out)
            }
        }
    }

    pub fn grad_sum_q(&self, theta: &Theta) -> Theta {
        match self.order {
            TaylorOrder::Zero => Theta::zeros(self.theta_star.len()),
            TaylorOrder::First => self.sum_grad.clone(),
            TaylorOrder::Second => &self.sum_grad + &self.sum_hess * (theta - &self.theta_star),
        }
    }
}

pub(crate) fn unpack(packed: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for a in 0..d {
        for b in a..d {
            m[(a, b)] = packed[k];
            m[(b, a)] = packed[k];
            k += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_variates::testutil::poisson_posterior;
    use crate::control_variates::ControlVariates;
    use crate::model::poisson::param_cv_closed_form;
    use crate::summation::compensated_sum;
    use rand::{Rng, SeedableRng};

    fn ts() -> Theta {
        Theta::from_vec(vec![0.98, 0.77])
    }

    #[test]
    fn exact_at_expansion_point() {
        let post = poisson_posterior(500, 1);
        for order in [TaylorOrder::Zero, TaylorOrder::First, TaylorOrder::Second] {
            let c = ParamExpandedCache::build(&post, &ts(), order, StorageMode::Stored).unwrap();
            let cv = ControlVariates::Param(c);
            for i in 0..post.n() {
                assert_eq!(cv.diff(&post, &ts(), i).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn matches_closed_form_poisson_expansion() {
        let post = poisson_posterior(300, 2);
        let c = ParamExpandedCache::build(&post, &ts(), TaylorOrder::Second, StorageMode::Stored)
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let th = Theta::from_vec(vec![rng.random_range(0.5..1.5), rng.random_range(0.3..1.2)]);
            let i = rng.random_range(0..post.n());
            let generic = c.q(&post, &th, i);
            let closed = param_cv_closed_form(&th, &ts(), post.data().y(i), post.data().row(i));
            assert!(
                (generic - closed).abs() <= 1e-12 * closed.abs().max(1.0),
                "{generic} vs {closed}"
            );
        }
    }

    #[test]
    fn aggregate_sum_matches_brute_force() {
        let post = poisson_posterior(1000, 4);
        let th = Theta::from_vec(vec![1.1, 0.6]);
        for order in [TaylorOrder::Zero, TaylorOrder::First, TaylorOrder::Second] {
            for storage in [StorageMode::Stored, StorageMode::Recompute] {
                let c = ParamExpandedCache::build(&post, &ts(), order, storage).unwrap();
                let brute = compensated_sum((0..post.n()).map(|i| c.q(&post, &th, i)));
                let fast = c.sum_q(&th);
                assert!(
                    (brute - fast).abs() / brute.abs() < 1e-9,
                    "{order:?} {storage:?}"
                );
            }
        }
    }

    #[test]
    fn sums_equal_stored_terms_and_hessian_symmetric() {
        let post = poisson_posterior(1000, 5);
        let c = ParamExpandedCache::build(&post, &ts(), TaylorOrder::Second, StorageMode::Stored)
            .unwrap();
        let direct = compensated_sum((0..post.n()).map(|i| c.stored_terms(i).unwrap().0));
        assert!((direct - c.sum_ell()).abs() / direct.abs() < 1e-9);
        for j in 0..2 {
            let g = compensated_sum((0..post.n()).map(|i| c.stored_terms(i).unwrap().1[j]));
            assert!((g - c.sum_grad()[j]).abs() <= 1e-9 * g.abs().max(1.0));
        }
        assert_eq!(c.sum_hess(), &c.sum_hess().transpose());
    }

    #[test]
    fn theta_gradient_matches_finite_differences() {
        let post = poisson_posterior(200, 6);
        let c = ParamExpandedCache::build(&post, &ts(), TaylorOrder::Second, StorageMode::Stored)
            .unwrap();
        let th = Theta::from_vec(vec![1.05, 0.7]);
        let g = c.grad_sum_q(&th);
        let fd = crate::model::testutil::fd_grad(|t| c.sum_q(t), &th, 1e-5);
        for j in 0..2 {
            assert!(crate::model::testutil::rel_err(g[j], fd[j]) < 1e-6);
        }
        let mut gi = vec![0.0; 2];
        c.add_grad_q(&post, &th, 7, 1.0, &mut gi);
        let fdi = crate::model::testutil::fd_grad(|t| c.q(&post, t, 7), &th, 1e-5);
        for j in 0..2 {
            assert!(crate::model::testutil::rel_err(gi[j], fdi[j]) < 1e-6);
        }
    }

    #[test]
    fn non_finite_terms_name_the_observation() {
        let post = poisson_posterior(50, 7);
        let huge = Theta::from_vec(vec![800.0, 0.0]);
        match ParamExpandedCache::build(&post, &huge, TaylorOrder::Second, StorageMode::Stored) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
