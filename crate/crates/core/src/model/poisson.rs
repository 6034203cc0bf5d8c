//! Poisson regression with log link: y_i | x_i ~ Pois(exp(α + x_iᵀβ)).

use nalgebra::{DMatrix, DVector};

use super::{linear_predictor, Dataset, Model, ModelKind, Theta};
use crate::error::{Error, Result};
use crate::special::{digamma, ln_factorial, trigamma};

#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonRegression;

fn check_count(y: f64) -> Result<()> {
    if y.is_finite() && y >= 0.0 && y.fract() == 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "Poisson response must be a nonnegative integer, got {y}"
        )))
    }
}

impl Model for PoissonRegression {
    fn kind(&self) -> ModelKind {
        ModelKind::Poisson
    }

    fn param_dim(&self, p: usize) -> usize {
        p + 1
    }

    fn check_response(&self, y: f64) -> Result<()> {
        check_count(y)
    }

    fn loglik_at(&self, theta: &Theta, y: f64, x: &[f64]) -> f64 {
        let eta = linear_predictor(theta, x);
        y * eta - eta.exp() - ln_factorial(y)
    }

    fn add_grad_theta(&self, theta: &Theta, y: f64, x: &[f64], scale: f64, out: &mut [f64]) {
        let r = scale * (y - linear_predictor(theta, x).exp());
        out[0] += r;
        for (o, xj) in out[1..].iter_mut().zip(x) {
            *o += r * xj;
        }
    }

    fn add_hess_theta(
        &self,
        theta: &Theta,
        _y: f64,
        x: &[f64],
        scale: f64,
        out: &mut DMatrix<f64>,
    ) {
        let w = -scale * linear_predictor(theta, x).exp();
        let d = x.len() + 1;
        for a in 0..d {
            let wa = if a == 0 { 1.0 } else { x[a - 1] };
            for b in 0..d {
                let wb = if b == 0 { 1.0 } else { x[b - 1] };
                out[(a, b)] += w * wa * wb;
            }
        }
    }

    fn data_derivatives(&self, theta: &Theta, z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (y, x) = (z[0], &z[1..]);
        if !(y + 1.0 > 0.0) {
            return Err(Error::Domain(format!(
                "polygamma needs y + 1 > 0, got y = {y}"
            )));
        }
        let eta = linear_predictor(theta, x);
        let rate = eta.exp();
        let p = x.len();
        let beta = theta.rows(1, p);
        let mut g = DVector::zeros(p + 1);
        g[0] = eta - digamma(y + 1.0);
        for j in 0..p {
            g[j + 1] = (y - rate) * beta[j];
        }
        let mut h = DMatrix::zeros(p + 1, p + 1);
        h[(0, 0)] = -trigamma(y + 1.0);
        for j in 0..p {
            h[(0, j + 1)] = beta[j];
            h[(j + 1, 0)] = beta[j];
            for k in j..p {
                let v = -rate * beta[j] * beta[k];
                h[(j + 1, k + 1)] = v;
                h[(k + 1, j + 1)] = v;
            }
        }
        Ok((g, h))
    }
}

/// ℓ_i(θ) = y_i w_iᵀθ − exp(w_iᵀθ) − log(y_i!).
pub fn poisson_loglik(theta: &Theta, data: &Dataset, i: usize) -> Result<f64> {
    let (y, x) = observation(theta, data, i)?;
    Ok(PoissonRegression.loglik_at(theta, y, x))
}

/// θ-space gradient and Hessian of ℓ_i.
pub fn poisson_derivatives(
    theta: &Theta,
    data: &Dataset,
    i: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (y, x) = observation(theta, data, i)?;
    let d = theta.len();
    let mut g = DVector::zeros(d);
    PoissonRegression.add_grad_theta(theta, y, x, 1.0, g.as_mut_slice());
    let mut h = DMatrix::zeros(d, d);
    PoissonRegression.add_hess_theta(theta, y, x, 1.0, &mut h);
    Ok((g, h))
}

/// z-space gradient and Hessian of ℓ(z | θ) at z = (y, x).
pub fn poisson_data_derivatives(theta: &Theta, z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if z.len() != theta.len() {
        return Err(Error::Domain(format!(
            "data point has {} coordinates, θ has {}",
            z.len(),
            theta.len()
        )));
    }
    PoissonRegression.data_derivatives(theta, z)
}

fn observation<'a>(theta: &Theta, data: &'a Dataset, i: usize) -> Result<(f64, &'a [f64])> {
    if i >= data.n() {
        return Err(Error::IndexOutOfRange {
            index: i,
            n: data.n(),
        });
    }
    if theta.len() != data.p() + 1 {
        return Err(Error::Domain(format!(
            "θ has {} entries, expected {}",
            theta.len(),
            data.p() + 1
        )));
    }
    let y = data.y(i);
    check_count(y)?;
    Ok((y, data.row(i)))
}

/// Second-order parameter-expanded control variate written out in terms of
/// μ(θ, x) = α + xᵀβ. Independent of the generic Taylor evaluation.
pub fn param_cv_closed_form(theta: &Theta, theta_star: &Theta, y: f64, x: &[f64]) -> f64 {
    let mu_star = linear_predictor(theta_star, x);
    let mu = linear_predictor(theta, x);
    let e = mu_star.exp();
    y * mu_star - e - ln_factorial(y) + (y - e) * (mu - mu_star) - 0.5 * e * (mu - mu_star).powi(2)
}

/// Second-order data-expanded control variate for observation z_i = (y_i,
/// x_i) around centroid z_c = (y_c, x_c), in simplified closed form.
pub fn data_cv_closed_form(theta: &Theta, y: f64, x: &[f64], y_c: f64, x_c: &[f64]) -> f64 {
    let mu_c = linear_predictor(theta, x_c);
    let mu_i = linear_predictor(theta, x);
    let e = mu_c.exp();
    let dy = y - y_c;
    y_c * mu_c - e - ln_factorial(y_c) + dy * (mu_c - digamma(y_c + 1.0))
        - 0.5 * dy * dy * trigamma(y_c + 1.0)
        + (y - e) * (mu_i - mu_c)
        - 0.5 * e * (mu_i - mu_c).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{fd_grad, rel_err};
    use crate::special::EULER_GAMMA;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn one(y: f64, x: f64) -> Dataset {
        Dataset::from_rows(vec![y], &[vec![x]]).unwrap()
    }

    #[test]
    fn loglik_examples() {
        let zero = Theta::from_vec(vec![0.0, 0.0]);
        assert_eq!(poisson_loglik(&zero, &one(0.0, 0.0), 0).unwrap(), -1.0);
        assert_eq!(poisson_loglik(&zero, &one(1.0, 3.7), 0).unwrap(), -1.0);
        let th = Theta::from_vec(vec![1.0, 0.75]);
        let v = poisson_loglik(&th, &one(2.0, 1.0), 0).unwrap();
        assert!((v - -2.947_749_856_565_675_7).abs() < 1e-13, "{v}");
    }

    #[test]
    fn loglik_rejects_bad_counts() {
        let zero = Theta::from_vec(vec![0.0, 0.0]);
        // Dataset accepts any finite response; the model rejects it.
        assert!(poisson_loglik(&zero, &one(-1.0, 0.0), 0).is_err());
        assert!(poisson_loglik(&zero, &one(1.5, 0.0), 0).is_err());
        assert!(poisson_loglik(&zero, &one(1.0, 0.0), 1).is_err());
    }

    #[test]
    fn derivative_examples() {
        let zero = Theta::from_vec(vec![0.0, 0.0]);
        let (g, _) = poisson_derivatives(&zero, &one(1.0, 0.0), 0).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        let (g, h) = poisson_derivatives(&zero, &one(3.0, 1.0), 0).unwrap();
        assert_eq!(g.as_slice(), &[2.0, 2.0]);
        assert_eq!(h, -DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let th = Theta::from_vec(vec![
                rng.random_range(-1.0..2.0),
                rng.random_range(-1.0..1.0),
            ]);
            let y = rng.random_range(0..8) as f64;
            let d = one(y, rng.random_range(-2.0..2.0));
            let (g, h) = poisson_derivatives(&th, &d, 0).unwrap();
            let fd = fd_grad(|t| poisson_loglik(t, &d, 0).unwrap(), &th, 1e-5);
            for j in 0..2 {
                assert!(rel_err(g[j], fd[j]) < 1e-6, "{} vs {}", g[j], fd[j]);
                let fdh = fd_grad(|t| poisson_derivatives(t, &d, 0).unwrap().0[j], &th, 1e-5);
                for k in 0..2 {
                    assert!(rel_err(h[(j, k)], fdh[k]) < 1e-6);
                }
            }
            assert_eq!(h, h.transpose());
        }
    }

    #[test]
    fn data_derivatives_use_harmonic_polygamma() {
        for y in 0..40u32 {
            let th = Theta::from_vec(vec![0.3, -0.2]);
            let (g, h) = poisson_data_derivatives(&th, &[y as f64, 0.5]).unwrap();
            let harmonic: f64 = (1..=y).map(|k| 1.0 / k as f64).sum();
            let harmonic2: f64 = (1..=y).map(|k| 1.0 / (k as f64).powi(2)).sum();
            let eta = 0.3 - 0.2 * 0.5;
            assert!((g[0] - (eta - (-EULER_GAMMA + harmonic))).abs() < 1e-12);
            assert!((h[(0, 0)] + (PI * PI / 6.0 - harmonic2)).abs() < 1e-12);
        }
        let (g, h) =
            poisson_data_derivatives(&Theta::from_vec(vec![0.0, 0.0]), &[0.0, 1.0]).unwrap();
        assert!((g[0] - EULER_GAMMA).abs() < 1e-15);
        assert!((h[(0, 0)] + 1.644_934_066_848_226_4).abs() < 1e-15);
    }

    #[test]
    fn data_derivatives_zero_beta_and_symmetry() {
        let (g, _) =
            poisson_data_derivatives(&Theta::from_vec(vec![0.4, 0.0, 0.0]), &[3.0, 1.0, -2.0])
                .unwrap();
        assert_eq!(&g.as_slice()[1..], &[0.0, 0.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let th = Theta::from_vec((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let z = [
                rng.random_range(0.0..10.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            let (_, h) = poisson_data_derivatives(&th, &z).unwrap();
            assert_eq!(h, h.transpose());
        }
        assert!(poisson_data_derivatives(&Theta::from_vec(vec![0.0, 0.0]), &[-1.0, 0.0]).is_err());
    }

    #[test]
    fn data_gradient_matches_finite_differences_in_z() {
        let th = Theta::from_vec(vec![0.8, 0.6]);
        let z = [2.3, -0.4];
        let (g, h) = poisson_data_derivatives(&th, &z).unwrap();
        let f = |zz: &Theta| PoissonRegression.loglik_at(&th, zz[0], &[zz[1]]);
        let fd = fd_grad(f, &Theta::from_vec(z.to_vec()), 1e-5);
        for j in 0..2 {
            assert!(rel_err(g[j], fd[j]) < 1e-6);
        }
        let fd_row = fd_grad(
            |zz| poisson_data_derivatives(&th, zz.as_slice()).unwrap().0[1],
            &Theta::from_vec(z.to_vec()),
            1e-5,
        );
        assert!(rel_err(h[(1, 0)], fd_row[0]) < 1e-6);
        assert!(rel_err(h[(1, 1)], fd_row[1]) < 1e-6);
    }
}
