//! Special functions needed by the count models: log-gamma, digamma and
//! trigamma, plus the standard normal CDF.
//!
//! Integer arguments up to [`HARMONIC_LIMIT`] go through exact harmonic
//! sums; everything else uses upward recurrence followed by the asymptotic
//! series.

use std::f64::consts::PI;
use std::sync::OnceLock;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Largest integer argument for which digamma/trigamma use harmonic sums.
/// Above this the trigamma partial sum loses relative precision to
/// cancellation against pi^2/6.
pub const HARMONIC_LIMIT: f64 = 64.0;

const LN_FACT_TABLE_LEN: usize = 256;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn ln_factorial_table() -> &'static [f64; LN_FACT_TABLE_LEN] {
    static TABLE: OnceLock<[f64; LN_FACT_TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; LN_FACT_TABLE_LEN];
        for k in 2..LN_FACT_TABLE_LEN {
            t[k] = t[k - 1] + (k as f64).ln();
        }
        t
    })
}

fn is_small_nonneg_integer(x: f64, limit: f64) -> bool {
    x >= 0.0 && x <= limit && x.fract() == 0.0
}

/// Stirling series for ln Gamma(x), valid for x >= 10.
fn ln_gamma_stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2 * (1.0 / 1260.0 + inv2 * (-1.0 / 1680.0 + inv2 * (1.0 / 1188.0)))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series
}

/// ln Gamma(x) for x > 0. Returns NaN for x <= 0.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    if is_small_nonneg_integer(x - 1.0, (LN_FACT_TABLE_LEN - 1) as f64) {
        return ln_factorial_table()[(x - 1.0) as usize];
    }
    if x >= 10.0 {
        return ln_gamma_stirling(x);
    }
    // shift upward: ln G(x) = ln G(x + k) - sum_{j<k} ln(x + j)
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift += z.ln();
        z += 1.0;
    }
    ln_gamma_stirling(z) - shift
}

/// ln(k!) = ln Gamma(k + 1); accepts non-integer k > -1.
pub fn ln_factorial(k: f64) -> f64 {
    ln_gamma(k + 1.0)
}

/// Digamma psi_0(x) for x > 0.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    if is_small_nonneg_integer(x, HARMONIC_LIMIT) {
        // psi(k) = -gamma + sum_{j=1}^{k-1} 1/j, summed smallest terms first
        let k = x as u64;
        let h: f64 = (1..k).rev().map(|j| 1.0 / j as f64).sum();
        return -EULER_GAMMA + h;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + z.ln() - 0.5 * inv - series
}

/// Trigamma psi_1(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    if is_small_nonneg_integer(x, HARMONIC_LIMIT) {
        let k = x as u64;
        let s: f64 = (1..k).rev().map(|j| 1.0 / (j as f64 * j as f64)).sum();
        return PI * PI / 6.0 - s;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    acc + series
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        assert_eq!(ln_gamma(1.0), 0.0);
        assert_eq!(ln_gamma(2.0), 0.0);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-14);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-13);
        // beyond the table
        let direct: f64 = (1..=300).map(|k| (k as f64).ln()).sum();
        assert!((ln_gamma(301.0) - direct).abs() / direct < 1e-13);
    }

    #[test]
    fn ln_gamma_against_statrs() {
        for &x in &[0.1, 0.7, 1.3, 2.5, 7.9, 9.99, 10.01, 33.3, 1e4] {
            let want = statrs::function::gamma::ln_gamma(x);
            assert!(
                (ln_gamma(x) - want).abs() < 1e-12 * want.abs().max(1.0),
                "x={x}"
            );
        }
    }

    #[test]
    fn polygamma_at_one() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-15);
        assert!((trigamma(1.0) - 1.644_934_066_848_226_4).abs() < 1e-15);
    }

    #[test]
    fn integer_and_asymptotic_paths_agree() {
        // 64 is the last harmonic argument, 65 the first asymptotic one
        for k in [20.0, 40.0, 64.0] {
            let d_next = digamma(k + 1.0);
            assert!((d_next - digamma(k) - 1.0 / k).abs() < 1e-13);
            let t_next = trigamma(k + 1.0);
            assert!((trigamma(k) - t_next - 1.0 / (k * k)).abs() < 1e-14);
        }
        // non-integer near an integer
        assert!((digamma(3.000_000_001) - digamma(3.0)).abs() < 1e-8);
        assert!((trigamma(3.000_000_001) - trigamma(3.0)).abs() < 1e-8);
    }

    #[test]
    fn digamma_against_statrs() {
        for &x in &[0.3, 1.5, 2.25, 9.5, 12.75, 100.5] {
            let want = statrs::function::gamma::digamma(x);
            assert!((digamma(x) - want).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn trigamma_recurrence_and_reflection() {
        // psi_1(1/2) = pi^2 / 2
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-12);
        for &x in &[0.4, 2.7, 15.2] {
            assert!((trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_cdf() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((std_normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
        assert!(std_normal_cdf(-40.0) >= 0.0);
    }

    #[test]
    fn invalid_arguments_are_nan() {
        assert!(ln_gamma(0.0).is_nan());
        assert!(digamma(-1.0).is_nan());
        assert!(trigamma(0.0).is_nan());
    }
}
