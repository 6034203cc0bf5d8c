//! Chain diagnostics: integrated autocorrelation time, effective sample
//! size, Monte Carlo standard errors and computational-time figures of merit.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::samplers::ChainTrace;

pub const MIN_SERIES_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IactMethod {
    /// Sum of autocorrelations up to the first non-positive pair sum.
    #[default]
    GeyerInitialPositive,
    /// ⌊√N⌋ non-overlapping batches.
    BatchMeans,
    /// Bartlett-windowed spectral density at zero, window ⌊N^{1/3}⌋.
    BartlettSpectral,
}

impl IactMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IactMethod::GeyerInitialPositive => "geyer_initial_positive",
            IactMethod::BatchMeans => "batch_means",
            IactMethod::BartlettSpectral => "bartlett_spectral",
        }
    }
}

impl fmt::Display for IactMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IactMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geyer" | "geyer_initial_positive" => Ok(IactMethod::GeyerInitialPositive),
            "batch_means" => Ok(IactMethod::BatchMeans),
            "bartlett" | "bartlett_spectral" => Ok(IactMethod::BartlettSpectral),
            other => Err(Error::config(
                "diagnostics.iact_method",
                format!("unknown method '{other}'"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IactEstimate {
    pub value: f64,
    pub method: IactMethod,
    /// Autocorrelation lags summed, or the batch length for batch means.
    pub lags_used: usize,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Sample autocorrelations ρ_0..ρ_max_lag (ρ_0 = 1) via FFT, using the
/// biased 1/N autocovariance.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Undefined(
            "autocorrelation needs at least two values".into(),
        ));
    }
    let (mean, var) = mean_var(series);
    if !(var > 0.0) {
        return Err(Error::Undefined("series has zero variance".into()));
    }
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    Ok((0..=max_lag.min(n - 1)).map(|k| buf[k].re / c0).collect())
}

pub fn iact(series: &[f64], method: IactMethod, burn_in: usize) -> Result<IactEstimate> {
    let x = &series[burn_in.min(series.len())..];
    let n = x.len();
    if n < MIN_SERIES_LEN {
        return Err(Error::Undefined(format!(
            "IACT needs at least {MIN_SERIES_LEN} values after burn-in, got {n}"
        )));
    }
    let (_, var) = mean_var(x);
    if !(var > 0.0) {
        return Err(Error::Undefined("series has zero variance".into()));
    }
    let floor = 1.0 / (n as f64).log10();
    let est = match method {
        IactMethod::GeyerInitialPositive => {
            let rho = acf(x, n - 1)?;
            let mut sum = 0.0;
            let mut k = 0;
            while 2 * k + 1 < rho.len() {
                let pair = rho[2 * k] + rho[2 * k + 1];
                if pair <= 0.0 {
                    break;
                }
                sum += pair;
                k += 1;
            }
            IactEstimate {
                value: 2.0 * sum - 1.0,
                method,
                lags_used: (2 * k).max(1),
            }
        }
        IactMethod::BatchMeans => {
            let batches = (n as f64).sqrt().floor() as usize;
            let len = n / batches;
            let means: Vec<f64> = (0..batches)
                .map(|b| x[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
                .collect();
            let (_, var_used) = mean_var(&x[..batches * len]);
            let (_, var_means) = mean_var(&means);
            // unbiased batch-mean variance over the batches
            let var_means = var_means * batches as f64 / (batches - 1) as f64;
            IactEstimate {
                value: len as f64 * var_means / var_used,
                method,
                lags_used: len,
            }
        }
        IactMethod::BartlettSpectral => {
            let w = (n as f64).cbrt().floor() as usize;
            let rho = acf(x, w)?;
            let tail: f64 = (1..=w)
                .map(|k| (1.0 - k as f64 / (w + 1) as f64) * rho[k])
                .sum();
            IactEstimate {
                value: 1.0 + 2.0 * tail,
                method,
                lags_used: w.max(1),
            }
        }
    };
    // antithetic chains can push the raw estimate to zero or below; ESS is capped at N·log₁₀N
    Ok(IactEstimate {
        value: est.value.max(floor),
        ..est
    })
}

pub fn ess(n: usize, iact: f64) -> f64 {
    n as f64 / iact
}

/// sd · √(IACT / N).
pub fn mc_standard_error(series: &[f64], iact: f64) -> f64 {
    let n = series.len();
    if n < 2 {
        return f64::NAN;
    }
    let (_, var) = mean_var(series);
    let sd = (var * n as f64 / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    sd * (iact / n as f64).sqrt()
}

/// Sign-weighted estimate r = Σψs/Σs and its Monte Carlo standard error by
/// the delta method: the linearized series s(ψ − r)/s̄ carries the
/// autocorrelation.
pub fn signed_estimate_with_mcse(
    psi: &[f64],
    signs: &[i8],
    method: IactMethod,
) -> Result<(f64, f64)> {
    if psi.len() != signs.len() || psi.is_empty() {
        return Err(Error::Domain(
            "ψ and sign series must be non-empty and of equal length".into(),
        ));
    }
    let n = psi.len() as f64;
    let sbar = signs.iter().map(|&s| s as f64).sum::<f64>() / n;
    if sbar <= 0.0 {
        return Err(Error::Undefined("mean sign is not positive".into()));
    }
    let r = psi
        .iter()
        .zip(signs)
        .map(|(p, &s)| p * s as f64)
        .sum::<f64>()
        / (n * sbar);
    let z: Vec<f64> = psi
        .iter()
        .zip(signs)
        .map(|(p, &s)| s as f64 * (p - r) / sbar)
        .collect();
    let t = match iact(&z, method, 0) {
        Ok(est) => est.value,
        Err(_) => return Ok((r, 0.0)),
    };
    Ok((r, mc_standard_error(&z, t)))
}

/// CT = IACT × cost per iteration.
/// Sample sd with its Monte Carlo standard error, by the delta method on
/// the squared deviations from the mean.
pub fn sd_with_mcse(series: &[f64], method: IactMethod) -> Result<(f64, f64)> {
    let (mean, var) = mean_var(series);
    let sq: Vec<f64> = series.iter().map(|x| (x - mean) * (x - mean)).collect();
    let t = iact(&sq, method, 0)?.value;
    let sd = var.sqrt();
    Ok((sd, mc_standard_error(&sq, t) / (2.0 * sd)))
}

pub fn ct(iact: f64, cost_proxy: f64) -> f64 {
    iact * cost_proxy
}

/// CT for signed PMMH: m_b λ IACT / (2τ − 1)².
pub fn ct_signed(iact: f64, m_b: f64, lambda: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.5) || tau > 1.0 {
        return Err(Error::Undefined(format!(
            "sign rate τ = {tau} must lie in (0.5, 1] for the sign-weighted estimator"
        )));
    }
    Ok(m_b * lambda * iact / (2.0 * tau - 1.0).powi(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtReport {
    pub iact: IactEstimate,
    pub cost_proxy: f64,
    pub tau: f64,
    pub ct_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub coordinate: usize,
    pub mean: f64,
    pub sd: f64,
    pub iact: f64,
    pub ess: f64,
    pub mcse: f64,
    pub accept_rate: f64,
    pub sign_rate: f64,
}

/// One row per θ coordinate. Chains with negative signs report the
/// sign-weighted mean and its delta-method standard error.
pub fn summarize(
    trace: &ChainTrace,
    burn_in: usize,
    method: IactMethod,
) -> Result<Vec<SummaryRow>> {
    if burn_in >= trace.len() {
        return Err(Error::config(
            "burn_in",
            format!("burn-in {burn_in} leaves no draws out of {}", trace.len()),
        ));
    }
    let signs = &trace.sign[burn_in..];
    let signed = signs.iter().any(|&s| s != 1);
    let accept_rate = trace.acceptance_rate(burn_in);
    let sign_rate = trace.sign_rate(burn_in);
    (0..trace.dim())
        .map(|j| {
            let x = trace.coordinate(j, burn_in);
            let (mean, var) = mean_var(&x);
            let n = x.len();
            let sd = (var * n as f64 / (n.max(2) - 1) as f64).sqrt();
            let t = iact(&x, method, 0).map(|e| e.value).unwrap_or(f64::NAN);
            let (mean, mcse) = if signed {
                signed_estimate_with_mcse(&x, signs, method)?
            } else {
                (
                    mean,
                    if sd == 0.0 {
                        0.0
                    } else {
                        mc_standard_error(&x, t)
                    },
                )
            };
            Ok(SummaryRow {
                coordinate: j + 1,
                mean,
                sd,
                iact: t,
                ess: ess(n, t),
                mcse,
                accept_rate,
                sign_rate,
            })
        })
        .collect()
}

/// Columns `coordinate,mean,sd,iact,ess,mcse,accept_rate,sign_rate`.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Domain(format!("csv: {e}"));
    out.write_record([
        "coordinate",
        "mean",
        "sd",
        "iact",
        "ess",
        "mcse",
        "accept_rate",
        "sign_rate",
    ])
    .map_err(io)?;
    for r in rows {
        out.write_record([
            r.coordinate.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.iact.to_string(),
            r.ess.to_string(),
            r.mcse.to_string(),
            r.accept_rate.to_string(),
            r.sign_rate.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng::{stream, Purpose};

    pub fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 0, Purpose::Auxiliary);
        let s = (1.0 - rho * rho).sqrt();
        let mut x = rng.sample::<f64, _>(StandardNormal);
        (0..n)
            .map(|_| {
                x = rho * x + s * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }
}
