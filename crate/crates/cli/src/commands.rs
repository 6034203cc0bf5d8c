//! One function per subcommand. Each writes its artifacts and returns the
//! list of files written.

use std::path::PathBuf;

use submcmc::diagnostics::{summarize, write_summary_csv};
use submcmc::{ChainTrace, Error, Result};

use crate::artifacts::{opt, Artifacts, ChainRecord};
use crate::config::{CvKind, DataSource, ExperimentConfig};
use crate::experiments::{self, Figure5Inputs};
use crate::pipeline::{self, Setup};

pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    if let DataSource::File(_) = cfg.data {
        return Err(Error::config(
            "data.path",
            "simulate generates a dataset; leave data.path empty",
        ));
    }
    let data = pipeline::load_dataset(cfg)?;
    let mut art = Artifacts::create(&cfg.output_dir, "simulate", &cfg.raw)?;
    data.write_csv(art.path("data.csv"))?;
    art.record("n", data.n());
    art.record("p", data.p());
    art.finish()
}

fn record_setup(art: &mut Artifacts, setup: &Setup) {
    art.record("n", setup.post.n());
    art.record("theta_star", setup.theta_star.as_slice());
    art.record("posterior_mode", setup.mode.as_slice());
    art.record("control_variates", setup.cv.label());
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut art = Artifacts::create(&cfg.output_dir, "run", &cfg.raw)?;
    let setup = pipeline::setup(cfg)?;
    let derived = pipeline::derive(cfg, &setup)?;
    let traces = pipeline::run_chains(cfg, &setup, &derived)?;
    record_setup(&mut art, &setup);
    art.record("theta0", derived.theta0.as_slice());
    art.record("proposal_kappa", derived.kappa);
    art.record("m", derived.m);
    art.record("pilot_sigma2_d", derived.plan.map(|p| p.sigma2_d));
    art.record("pilot_zero_variance", derived.plan.map(|p| p.zero_variance));
    art.record("block_poisson_a", derived.block_poisson_a);
    for trace in &traces {
        write_trace(&mut art, cfg, trace, &format!("chain{}", trace.chain))?;
        art.chains.push(ChainRecord::from_trace(trace, cfg.burn_in));
    }
    art.finish()
}

fn write_trace(
    art: &mut Artifacts,
    cfg: &ExperimentConfig,
    trace: &ChainTrace,
    tag: &str,
) -> Result<()> {
    trace.save_csv(art.path(&format!("trace_{tag}.csv")))?;
    let rows = summarize(trace, cfg.burn_in, cfg.iact_method)?;
    write_summary_csv(&rows, art.writer(&format!("summary_{tag}.csv"))?)
}

pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut art = Artifacts::create(&cfg.output_dir, "plan", &cfg.raw)?;
    let setup = pipeline::setup_with_cv(cfg)?;
    let base = pipeline::plan(cfg, &setup, cfg.plan_target)?;
    let n = setup.post.n();
    let rows: Vec<Vec<String>> = cfg
        .figure5
        .targets
        .iter()
        .copied()
        .filter(|&t| t > 0.0)
        .chain(std::iter::once(cfg.plan_target))
        .map(|t| {
            let p = pipeline::retarget(&setup, &base, t)?;
            Ok(vec![
                setup.cv.label().to_string(),
                t.to_string(),
                n.to_string(),
                p.sigma2_d.to_string(),
                p.m.to_string(),
                (p.m as f64 / n as f64).to_string(),
                p.zero_variance.to_string(),
            ])
        })
        .collect::<Result<_>>()?;
    record_setup(&mut art, &setup);
    art.write_csv(
        "plan.csv",
        &[
            "control_variates",
            "target",
            "n",
            "sigma2_d",
            "m",
            "fraction",
            "zero_variance",
        ],
        &rows,
    )?;
    art.finish()
}

pub fn diagnose(cfg: &ExperimentConfig, traces: &[PathBuf]) -> Result<Vec<String>> {
    let mut art = Artifacts::create(&cfg.output_dir, "diagnose", &cfg.raw)?;
    let mut loaded = Vec::with_capacity(traces.len());
    for path in traces {
        let trace = ChainTrace::load_csv(path)?;
        if cfg.burn_in >= trace.len() {
            return Err(Error::config(
                "burn_in",
                format!("{} has only {} rows", path.display(), trace.len()),
            ));
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into());
        loaded.push((stem, summarize(&trace, cfg.burn_in, cfg.iact_method)?));
    }
    art.record(
        "traces",
        traces
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>(),
    );
    for (stem, rows) in &loaded {
        write_summary_csv(rows, art.writer(&format!("summary_{stem}.csv"))?)?;
    }
    art.finish()
}

pub fn figure1(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut art = Artifacts::create(&cfg.output_dir, "figure1", &cfg.raw)?;
    let rows: Vec<Vec<String>> = experiments::figure1(&cfg.figure1)
        .iter()
        .map(|r| {
            vec![
                r.sigma2_pop.to_string(),
                r.n.to_string(),
                r.target.to_string(),
                r.m_opt.to_string(),
                r.fraction.to_string(),
            ]
        })
        .collect();
    art.write_csv(
        "figure1.csv",
        &["sigma2_pop", "n", "target", "m_opt", "fraction"],
        &rows,
    )?;
    art.finish()
}

pub fn figure234(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut art = Artifacts::create(&cfg.output_dir, "figure234", &cfg.raw)?;
    let post = pipeline::posterior(cfg, pipeline::load_dataset(cfg)?)?;
    let theta_star = pipeline::theta_star(cfg, &post)?;
    let panels = experiments::figure234(&post, &theta_star, &cfg.figure234, cfg.seed)?;
    let d = post.dim();
    let mut header: Vec<String> = ["panel", "cv", "k", "order", "radius"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=d).map(|j| format!("theta_{j}")));
    header.extend(["sigma2_d", "r2", "m_opt"].map(String::from));
    let panel_rows: Vec<Vec<String>> = panels
        .iter()
        .map(|p| {
            let mut row = vec![
                p.id.to_string(),
                kind_label(p.cv).to_string(),
                opt(p.k),
                p.order.to_string(),
                p.radius.to_string(),
            ];
            row.extend(p.theta.iter().map(|v| v.to_string()));
            row.extend([
                p.sigma2_d.to_string(),
                p.r2.to_string(),
                p.m_opt.to_string(),
            ]);
            row
        })
        .collect();
    let scatter_rows: Vec<Vec<String>> = panels
        .iter()
        .flat_map(|p| {
            p.ell.iter().zip(&p.q).enumerate().map(move |(i, (l, q))| {
                vec![
                    p.id.to_string(),
                    (i + 1).to_string(),
                    l.to_string(),
                    q.to_string(),
                ]
            })
        })
        .collect();
    art.record("theta_star", theta_star.as_slice());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    art.write_csv("figure234_panels.csv", &header, &panel_rows)?;
    art.write_csv(
        "figure234_scatter.csv",
        &["panel", "i", "ell", "q"],
        &scatter_rows,
    )?;
    art.finish()
}

fn kind_label(k: CvKind) -> &'static str {
    match k {
        CvKind::None => "none",
        CvKind::Param => "param",
        CvKind::Data => "data",
    }
}

pub fn figure5(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut art = Artifacts::create(&cfg.output_dir, "figure5", &cfg.raw)?;
    let setup = pipeline::setup_with_cv(cfg)?;
    let base = pipeline::plan(cfg, &setup, 1.0)?;
    let proposal = pipeline::proposal(cfg, &setup)?;
    let theta0 = pipeline::start_point(cfg, &setup)?;
    let inputs = Figure5Inputs {
        post: &setup.post,
        cv: &setup.cv,
        proposal: &proposal,
        theta0: &theta0,
        sigma2_d: base.sigma2_d,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
        method: cfg.iact_method,
    };
    let runs = experiments::figure5(&inputs, &cfg.figure5)?;
    record_setup(&mut art, &setup);
    art.record("pilot_sigma2_d", base.sigma2_d);
    art.record("proposal_kappa", proposal.step_scale);
    art.record("proposal_shape", cfg.raw.get("proposal.shape"));
    for run in &runs {
        run.trace
            .save_csv(art.path(&format!("figure5_trace_target{}.csv", run.target)))?;
        art.chains
            .push(ChainRecord::from_trace(&run.trace, cfg.burn_in));
    }
    let mut acf_rows = Vec::new();
    for run in &runs {
        for (j, rho) in run.acf.iter().enumerate() {
            for (lag, r) in rho.iter().enumerate() {
                acf_rows.push(vec![
                    run.target.to_string(),
                    (j + 1).to_string(),
                    lag.to_string(),
                    r.to_string(),
                ]);
            }
        }
    }
    art.write_csv(
        "figure5_acf.csv",
        &["target", "coordinate", "lag", "rho"],
        &acf_rows,
    )?;
    let table: Vec<Vec<String>> = experiments::figure5_table(&runs, cfg.burn_in)
        .iter()
        .map(|r| {
            vec![
                r.target.to_string(),
                opt(r.m),
                r.coordinate.to_string(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.iact.to_string(),
                r.mcse.to_string(),
                r.accept_rate.to_string(),
                r.evaluations_per_iter.to_string(),
                r.ct.to_string(),
            ]
        })
        .collect();
    art.write_csv(
        "figure5_iact.csv",
        &[
            "target",
            "m",
            "coordinate",
            "mean",
            "sd",
            "iact",
            "mcse",
            "accept_rate",
            "evaluations_per_iter",
            "ct",
        ],
        &table,
    )?;
    art.finish()
}
