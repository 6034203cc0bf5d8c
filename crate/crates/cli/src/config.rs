//! Flat `key = value` experiment configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Every key has a
//! default (possibly empty), unknown keys are rejected, and the resolved
//! table is echoed next to every artifact so a run can be repeated from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use submcmc::control_variates::{StorageMode, TaylorOrder};
use submcmc::diagnostics::IactMethod;
use submcmc::estimators::{Dependence, PilotSettings, MIN_PILOT_SIZE};
use submcmc::model::{CovariateLaw, GaussianPrior, ModelKind};
use submcmc::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "SUBMCMC_OUT";

const DEFAULT_OUTPUT_DIR: &str = "out";

/// Every accepted key with its default, in echo order.
const KEYS: &[(&str, &str)] = &[
    ("model", "poisson"),
    ("data.path", ""),
    ("data.n", "1000"),
    ("data.theta", "1,0.75"),
    ("data.seed", "1"),
    ("data.covariates", "normal"),
    ("prior.mean", "0"),
    ("prior.sd", "10"),
    ("sampler", "mh"),
    ("iterations", "10000"),
    ("burn_in", "1000"),
    ("seed", "1"),
    ("chains", "1"),
    ("theta0", "mode"),
    ("proposal.kind", "rwm"),
    ("proposal.kappa", "auto"),
    ("proposal.shape", "laplace"),
    ("hmc.epsilon", "0.3"),
    ("hmc.steps", "10"),
    ("hmc.mass", "laplace"),
    ("hmc.variance_gradient", "true"),
    ("estimator", "difference"),
    ("m", "auto"),
    ("plan.target", "1"),
    ("plan.pilot_draws", "20"),
    ("plan.pilot_m", "200"),
    ("dependence", "independent"),
    ("dependence.phi", ""),
    ("dependence.blocks", ""),
    ("block_poisson.lambda", "5"),
    ("block_poisson.m_b", "10"),
    ("block_poisson.a", "auto"),
    ("cv.kind", "auto"),
    ("cv.order", "2"),
    ("cv.k", "75"),
    ("cv.expansion", "pilot"),
    ("cv.storage", "stored"),
    ("cv.cache", ""),
    ("diagnostics.iact_method", "geyer"),
    (
        "figure1.n",
        "100,300,1000,3000,10000,30000,100000,300000,1000000,3000000,10000000",
    ),
    ("figure1.sigma2", "0.01,0.1"),
    ("figure1.target", "3.3"),
    ("figure234.cv", "param,data"),
    ("figure234.radii", "0.025,0.1,0.25"),
    ("figure234.orders", "0,1,2"),
    ("figure234.k", "75"),
    ("figure234.target", "3.3"),
    ("figure5.targets", "0,1,10,50"),
    ("figure5.acf_lags", "200"),
    ("output.dir", ""),
];

/// Unvalidated key/value table with defaults filled in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { values }
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.assign(line).map_err(|e| match e {
                Error::Config { field, msg } if field == "config" => {
                    Error::config("config", format!("line {}: {msg}", lineno + 1))
                }
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::config(
                "config",
                format!("expected key = value, got {assignment:?}"),
            )
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::config(key, "unknown configuration key")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Fills `output.dir` from the environment when unset.
    pub fn with_output_default(mut self) -> Self {
        if self.get("output.dir").is_empty() {
            let dir = std::env::var(OUTPUT_ENV)
                .ok()
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| DEFAULT_OUTPUT_DIR.to_string());
            self.values.insert("output.dir".into(), dir);
        }
        self
    }

    /// The table in key order, one `key = value` per line.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key);
        if raw.is_empty() {
            return Err(Error::config(key, "a value is required"));
        }
        raw.parse::<T>()
            .map_err(|e| Error::config(key, format!("cannot parse {raw:?}: {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.get(key).is_empty() {
            Ok(None)
        } else {
            self.parsed(key).map(Some)
        }
    }

    fn auto_or<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.get(key) == "auto" {
            Ok(None)
        } else {
            self.parsed(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key);
        if raw.is_empty() {
            return Err(Error::config(key, "a non-empty list is required"));
        }
        raw.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<T>()
                    .map_err(|e| Error::config(key, format!("cannot parse list entry {s:?}: {e}")))
            })
            .collect()
    }

    fn choice<'a>(&self, key: &str, allowed: &[&'a str]) -> Result<&'a str> {
        let raw = self.get(key);
        allowed.iter().copied().find(|a| *a == raw).ok_or_else(|| {
            Error::config(
                key,
                format!("expected one of {}, got {raw:?}", allowed.join(", ")),
            )
        })
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(Error::config(
                key,
                format!("expected true or false, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Simulate {
        n: usize,
        theta: Vec<f64>,
        seed: u64,
        law: CovariateLaw,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Mh,
    Pmmh,
    Hmc,
    HmcEcs,
}

impl SamplerKind {
    pub fn uses_subsampling(self) -> bool {
        matches!(self, SamplerKind::Pmmh | SamplerKind::HmcEcs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvKind {
    None,
    Param,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Difference,
    BlockPoisson,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartPoint {
    /// Full-data posterior mode.
    Mode,
    /// The control-variate expansion point θ⋆.
    Expansion,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpansionChoice {
    Pilot,
    Mode,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Identity,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalChoice {
    RandomWalk,
    Independence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Settings {
    pub n_grid: Vec<usize>,
    pub sigma2: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure234Settings {
    pub cv: Vec<CvKind>,
    pub radii: Vec<f64>,
    pub orders: Vec<TaylorOrder>,
    pub k: Vec<usize>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure5Settings {
    pub targets: Vec<f64>,
    pub acf_lags: usize,
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub model: ModelKind,
    pub data: DataSource,
    pub prior: GaussianPrior,
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub theta0: StartPoint,
    pub proposal: ProposalChoice,
    /// `None` means the 2.38/√d rule.
    pub kappa: Option<f64>,
    pub proposal_shape: Shape,
    pub hmc_epsilon: f64,
    pub hmc_steps: usize,
    pub hmc_mass: Shape,
    pub variance_gradient: bool,
    pub estimator: EstimatorKind,
    /// `None` means planned from a pilot run.
    pub m: Option<usize>,
    pub plan_target: f64,
    pub pilot: PilotSettings,
    pub dependence: Dependence,
    pub bp_lambda: usize,
    pub bp_m_b: usize,
    /// `None` means d̂_pilot − λ.
    pub bp_a: Option<f64>,
    pub cv_kind: CvKind,
    pub cv_order: TaylorOrder,
    pub cv_k: usize,
    pub cv_expansion: ExpansionChoice,
    pub cv_storage: StorageMode,
    pub cv_cache: Option<PathBuf>,
    pub iact_method: IactMethod,
    pub figure1: Figure1Settings,
    pub figure234: Figure234Settings,
    pub figure5: Figure5Settings,
    pub output_dir: PathBuf,
}

fn parse_law(raw: &str) -> Result<CovariateLaw> {
    let err = || {
        Error::config(
            "data.covariates",
            format!("expected normal or uniform:LO:HI, got {raw:?}"),
        )
    };
    if raw == "normal" {
        return Ok(CovariateLaw::StandardNormal);
    }
    let rest = raw.strip_prefix("uniform:").ok_or_else(err)?;
    let (lo, hi) = rest.split_once(':').ok_or_else(err)?;
    let lo: f64 = lo.trim().parse().map_err(|_| err())?;
    let hi: f64 = hi.trim().parse().map_err(|_| err())?;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(err());
    }
    Ok(CovariateLaw::Uniform { lo, hi })
}

fn shape(raw: &RawConfig, key: &str) -> Result<Shape> {
    Ok(match raw.choice(key, &["identity", "laplace"])? {
        "identity" => Shape::Identity,
        _ => Shape::Laplace,
    })
}

fn parse_cv_kind(key: &str, s: &str) -> Result<CvKind> {
    match s {
        "none" => Ok(CvKind::None),
        "param" => Ok(CvKind::Param),
        "data" => Ok(CvKind::Data),
        other => Err(Error::config(
            key,
            format!("expected none, param or data, got {other:?}"),
        )),
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(Error::config(key, "must be at least 1"))
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let raw = raw.with_output_default();
        let model: ModelKind = raw.parsed("model")?;
        let data = match raw.optional::<PathBuf>("data.path")? {
            Some(path) => DataSource::File(path),
            None => {
                if model != ModelKind::Poisson {
                    return Err(Error::config(
                        "data.path",
                        format!("the simulator covers the Poisson model only; give a dataset for {model}"),
                    ));
                }
                let theta: Vec<f64> = raw.list("data.theta")?;
                if theta.len() < 2 {
                    return Err(Error::config(
                        "data.theta",
                        "need an intercept and at least one slope",
                    ));
                }
                DataSource::Simulate {
                    n: at_least_one("data.n", raw.parsed("data.n")?)?,
                    theta,
                    seed: raw.parsed("data.seed")?,
                    law: parse_law(raw.get("data.covariates"))?,
                }
            }
        };
        let prior = GaussianPrior {
            mean: raw.parsed("prior.mean")?,
            sd: positive("prior.sd", raw.parsed("prior.sd")?)?,
        };
        let sampler = match raw.choice("sampler", &["mh", "pmmh", "hmc", "hmc_ecs"])? {
            "mh" => SamplerKind::Mh,
            "pmmh" => SamplerKind::Pmmh,
            "hmc" => SamplerKind::Hmc,
            _ => SamplerKind::HmcEcs,
        };
        let iterations = at_least_one("iterations", raw.parsed("iterations")?)?;
        let burn_in: usize = raw.parsed("burn_in")?;
        if burn_in >= iterations {
            return Err(Error::config("burn_in", "must be smaller than iterations"));
        }
        let theta0 = match raw.get("theta0") {
            "mode" => StartPoint::Mode,
            "expansion" => StartPoint::Expansion,
            _ => StartPoint::Given(raw.list("theta0")?),
        };
        let proposal = match raw.choice("proposal.kind", &["rwm", "independence"])? {
            "rwm" => ProposalChoice::RandomWalk,
            _ => ProposalChoice::Independence,
        };
        let kappa = raw
            .auto_or::<f64>("proposal.kappa")?
            .map(|k| positive("proposal.kappa", k))
            .transpose()?;
        let estimator = match raw.choice("estimator", &["difference", "block_poisson"])? {
            "difference" => EstimatorKind::Difference,
            _ => EstimatorKind::BlockPoisson,
        };
        let m = raw
            .auto_or::<usize>("m")?
            .map(|m| at_least_one("m", m))
            .transpose()?;
        let dependence = match raw.choice("dependence", &["independent", "cpm", "bpm"])? {
            "independent" => Dependence::Independent,
            "cpm" => Dependence::Cpm {
                phi: raw.optional("dependence.phi")?.ok_or_else(|| {
                    Error::config("dependence.phi", "required when dependence = cpm")
                })?,
            },
            _ => Dependence::Bpm {
                blocks: raw.optional("dependence.blocks")?.ok_or_else(|| {
                    Error::config("dependence.blocks", "required when dependence = bpm")
                })?,
            },
        };
        dependence.validate()?;
        let cv_kind = match raw.get("cv.kind") {
            "auto" => match sampler {
                SamplerKind::HmcEcs => CvKind::Param,
                _ => CvKind::Data,
            },
            other => parse_cv_kind("cv.kind", other)?,
        };
        let cv_expansion = match raw.get("cv.expansion") {
            "pilot" => ExpansionChoice::Pilot,
            "mode" => ExpansionChoice::Mode,
            _ => ExpansionChoice::Given(raw.list("cv.expansion")?),
        };
        let cv_storage = match raw.choice("cv.storage", &["stored", "recompute"])? {
            "stored" => StorageMode::Stored,
            _ => StorageMode::Recompute,
        };
        let orders: Vec<u8> = raw.list("figure234.orders")?;
        let cfg = ExperimentConfig {
            model,
            data,
            prior,
            sampler,
            iterations,
            burn_in,
            seed: raw.parsed("seed")?,
            chains: at_least_one("chains", raw.parsed("chains")?)?,
            theta0,
            proposal,
            kappa,
            proposal_shape: shape(&raw, "proposal.shape")?,
            hmc_epsilon: positive("hmc.epsilon", raw.parsed("hmc.epsilon")?)?,
            hmc_steps: at_least_one("hmc.steps", raw.parsed("hmc.steps")?)?,
            hmc_mass: shape(&raw, "hmc.mass")?,
            variance_gradient: raw.flag("hmc.variance_gradient")?,
            estimator,
            m,
            plan_target: positive("plan.target", raw.parsed("plan.target")?)?,
            pilot: PilotSettings {
                draws: at_least_one("plan.pilot_draws", raw.parsed("plan.pilot_draws")?)?,
                m: raw.parsed("plan.pilot_m")?,
            },
            dependence,
            bp_lambda: at_least_one("block_poisson.lambda", raw.parsed("block_poisson.lambda")?)?,
            bp_m_b: at_least_one("block_poisson.m_b", raw.parsed("block_poisson.m_b")?)?,
            bp_a: raw.auto_or("block_poisson.a")?,
            cv_kind,
            cv_order: TaylorOrder::from_u8(raw.parsed("cv.order")?)?,
            cv_k: at_least_one("cv.k", raw.parsed("cv.k")?)?,
            cv_expansion,
            cv_storage,
            cv_cache: raw.optional("cv.cache")?,
            iact_method: raw.parsed("diagnostics.iact_method")?,
            figure1: Figure1Settings {
                n_grid: raw.list("figure1.n")?,
                sigma2: raw.list("figure1.sigma2")?,
                target: positive("figure1.target", raw.parsed("figure1.target")?)?,
            },
            figure234: Figure234Settings {
                cv: raw
                    .get("figure234.cv")
                    .split(',')
                    .map(|s| parse_cv_kind("figure234.cv", s.trim()))
                    .collect::<Result<_>>()?,
                radii: raw.list("figure234.radii")?,
                orders: orders
                    .into_iter()
                    .map(TaylorOrder::from_u8)
                    .collect::<Result<_>>()
                    .map_err(|e| match e {
                        Error::Config { msg, .. } => Error::config("figure234.orders", msg),
                        other => other,
                    })?,
                k: raw.list("figure234.k")?,
                target: positive("figure234.target", raw.parsed("figure234.target")?)?,
            },
            figure5: Figure5Settings {
                targets: raw.list("figure5.targets")?,
                acf_lags: raw.parsed("figure5.acf_lags")?,
            },
            output_dir: PathBuf::from(raw.get("output.dir")),
            raw,
        };
        cfg.check_requirements()?;
        Ok(cfg)
    }

    /// Sampler-specific requirement matrix.
    fn check_requirements(&self) -> Result<()> {
        if self.estimator == EstimatorKind::BlockPoisson {
            if self.sampler != SamplerKind::Pmmh {
                return Err(Error::config(
                    "estimator",
                    "block_poisson requires sampler = pmmh",
                ));
            }
            if matches!(self.dependence, Dependence::Cpm { .. }) {
                return Err(Error::config(
                    "dependence",
                    "cpm is not available with the Block-Poisson estimator; use independent or bpm",
                ));
            }
            if let Some(a) = self.bp_a {
                if !a.is_finite() {
                    return Err(Error::config("block_poisson.a", "must be finite"));
                }
            }
        }
        if self.sampler == SamplerKind::HmcEcs && self.cv_kind == CvKind::Data {
            return Err(Error::config(
                "cv.kind",
                "hmc_ecs needs θ-gradients of the control variates; use param or none",
            ));
        }
        if let Dependence::Bpm { blocks } = self.dependence {
            match (self.estimator, self.m) {
                (EstimatorKind::Difference, Some(m)) if blocks > m => {
                    return Err(Error::config(
                        "dependence.blocks",
                        format!("G = {blocks} exceeds m = {m}"),
                    ))
                }
                (EstimatorKind::BlockPoisson, _) if blocks > self.bp_lambda => {
                    return Err(Error::config(
                        "dependence.blocks",
                        format!("G = {blocks} exceeds λ = {}", self.bp_lambda),
                    ))
                }
                _ => {}
            }
        }
        if self.sampler.uses_subsampling() && self.m.is_none() && self.pilot.m < MIN_PILOT_SIZE {
            return Err(Error::config(
                "plan.pilot_m",
                format!("pilot size must be at least {MIN_PILOT_SIZE}"),
            ));
        }
        Ok(())
    }
}
