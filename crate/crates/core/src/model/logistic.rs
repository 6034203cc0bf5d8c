//! Bernoulli-logit regression: ℓ_i = y_i η_i − log(1 + e^{η_i}), η_i = w_iᵀθ.

use nalgebra::{DMatrix, DVector};

use super::{linear_predictor, Model, ModelKind, Theta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl Model for Logistic {
    fn kind(&self) -> ModelKind {
        ModelKind::Logistic
    }

    fn param_dim(&self, p: usize) -> usize {
        p + 1
    }

    fn check_response(&self, y: f64) -> Result<()> {
        if y == 0.0 || y == 1.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "logistic response must be 0 or 1, got {y}"
            )))
        }
    }

    fn loglik_at(&self, theta: &Theta, y: f64, x: &[f64]) -> f64 {
        let eta = linear_predictor(theta, x);
        y * eta - softplus(eta)
    }

    fn add_grad_theta(&self, theta: &Theta, y: f64, x: &[f64], scale: f64, out: &mut [f64]) {
        let r = scale * (y - sigmoid(linear_predictor(theta, x)));
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
        let s = sigmoid(linear_predictor(theta, x));
        let w = -scale * s * (1.0 - s);
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
        let eta = linear_predictor(theta, x);
        let s = sigmoid(eta);
        let p = x.len();
        let mut g = DVector::zeros(p + 1);
        let mut h = DMatrix::zeros(p + 1, p + 1);
        g[0] = eta;
        for j in 0..p {
            let bj = theta[j + 1];
            g[j + 1] = (y - s) * bj;
            h[(0, j + 1)] = bj;
            h[(j + 1, 0)] = bj;
            for k in 0..p {
                h[(j + 1, k + 1)] = -s * (1.0 - s) * bj * theta[k + 1];
            }
        }
        Ok((g, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{fd_grad, rel_err};
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_parameters_give_minus_log_two() {
        let th = Theta::zeros(3);
        for y in [0.0, 1.0] {
            let v = Logistic.loglik_at(&th, y, &[0.3, -4.0]);
            assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_binary() {
        assert!(Logistic.check_response(2.0).is_err());
        assert!(Logistic.check_response(0.5).is_err());
        assert!(Logistic.check_response(1.0).is_ok());
    }

    #[test]
    fn extreme_predictors_stay_finite() {
        let th = Theta::from_vec(vec![800.0]);
        assert!(Logistic.loglik_at(&th, 0.0, &[]).is_finite());
        let th = Theta::from_vec(vec![-800.0]);
        assert!(Logistic.loglik_at(&th, 1.0, &[]).is_finite());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let th = Theta::from_vec((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let y = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let mut g = vec![0.0; 3];
            Logistic.add_grad_theta(&th, y, &x, 1.0, &mut g);
            let fd = fd_grad(|t| Logistic.loglik_at(t, y, &x), &th, 1e-5);
            let mut h = DMatrix::zeros(3, 3);
            Logistic.add_hess_theta(&th, y, &x, 1.0, &mut h);
            for j in 0..3 {
                assert!(rel_err(g[j], fd[j]) < 1e-6);
                let fdh = fd_grad(
                    |t| {
                        let mut gg = vec![0.0; 3];
                        Logistic.add_grad_theta(t, y, &x, 1.0, &mut gg);
                        gg[j]
                    },
                    &th,
                    1e-5,
                );
                for k in 0..3 {
                    assert!(rel_err(h[(j, k)], fdh[k]) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn data_derivatives_match_finite_differences() {
        let th = Theta::from_vec(vec![0.2, -0.7, 1.1]);
        let z = Theta::from_vec(vec![0.4, 0.3, -1.2]);
        let (g, h) = Logistic.data_derivatives(&th, z.as_slice()).unwrap();
        let fd = fd_grad(|zz| Logistic.loglik_point(&th, zz.as_slice()), &z, 1e-5);
        for j in 0..3 {
            assert!(rel_err(g[j], fd[j]) < 1e-6);
            let fdh = fd_grad(
                |zz| Logistic.data_derivatives(&th, zz.as_slice()).unwrap().0[j],
                &z,
                1e-5,
            );
            for k in 0..3 {
                assert!(rel_err(h[(j, k)], fdh[k]) < 1e-6);
            }
        }
    }
}
