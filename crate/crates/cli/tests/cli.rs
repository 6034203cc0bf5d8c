use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn submcmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_submcmc"))
        .args(args)
        .env_remove("SUBMCMC_OUT")
        .output()
        .expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

fn small_pmmh(out: &str) -> Vec<String> {
    [
        "--out",
        out,
        "--set",
        "data.n=400",
        "--set",
        "sampler=pmmh",
        "--set",
        "iterations=400",
        "--set",
        "burn_in=50",
        "run",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_ok(args: &[String]) {
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = submcmc(&args);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn identical_configurations_give_identical_traces() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&small_pmmh(&out_arg(&a)));
    run_ok(&small_pmmh(&out_arg(&b)));
    assert_eq!(
        read(a.join("trace_chain0.csv")),
        read(b.join("trace_chain0.csv"))
    );
    assert_eq!(
        read(a.join("summary_chain0.csv")),
        read(b.join("summary_chain0.csv"))
    );
}

#[test]
fn rerunning_the_echoed_configuration_reproduces_the_outputs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&small_pmmh(&out_arg(&a)));
    let echo = a.join("config.resolved");
    let out = submcmc(&["--config", &out_arg(&echo), "--out", &out_arg(&b), "run"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["trace_chain0.csv", "summary_chain0.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(b.join("manifest.json"))).unwrap();
    assert_eq!(
        manifest["derived"],
        serde_json::from_slice::<serde_json::Value>(&read(a.join("manifest.json"))).unwrap()
            ["derived"]
    );
}

#[test]
fn missing_required_field_exits_2_naming_it() {
    let tmp = TempDir::new().unwrap();
    let out = submcmc(&[
        "--out",
        &out_arg(tmp.path()),
        "--set",
        "dependence=cpm",
        "--set",
        "sampler=pmmh",
        "run",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dependence.phi"));
    let out = submcmc(&[
        "--out",
        &out_arg(tmp.path()),
        "--set",
        "no.such.key=1",
        "run",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));
}

#[test]
fn runtime_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.csv");
    let out = submcmc(&[
        "--out",
        &out_arg(tmp.path()),
        "--set",
        &format!("data.path={}", missing.display()),
        "run",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn ten_row_dataset_runs_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("tiny.csv");
    std::fs::write(
        &data,
        "y,x1\n3,0.5\n1,-0.2\n0,-1.1\n7,1.3\n2,0.1\n4,0.7\n1,-0.6\n0,-1.7\n5,0.9\n2,0.0\n",
    )
    .unwrap();
    for (sampler, extra) in [
        ("mh", "cv.kind=none"),
        ("pmmh", "cv.k=3"),
        ("hmc", "hmc.steps=5"),
        ("hmc_ecs", "m=5"),
    ] {
        let dir = tmp.path().join(sampler);
        let out = submcmc(&[
            "--out",
            &out_arg(&dir),
            "--set",
            &format!("data.path={}", data.display()),
            "--set",
            &format!("sampler={sampler}"),
            "--set",
            "iterations=100",
            "--set",
            "burn_in=0",
            "--set",
            "plan.pilot_m=30",
            "--set",
            extra,
            "run",
        ]);
        assert!(
            out.status.success(),
            "{sampler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        for f in [
            "config.resolved",
            "manifest.json",
            "trace_chain0.csv",
            "summary_chain0.csv",
        ] {
            assert!(dir.join(f).exists(), "{sampler}: {f}");
        }
        let mut rdr = csv::Reader::from_path(dir.join("summary_chain0.csv")).unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 2, "{sampler}");
        for row in &rows {
            let mean: f64 = row[1].parse().unwrap();
            assert!(mean.is_finite());
        }
        let trace = std::fs::read_to_string(dir.join("trace_chain0.csv")).unwrap();
        assert_eq!(trace.lines().count(), 101, "{sampler}");
        assert!(trace.starts_with("iter,theta_1,theta_2,accept,loglik_est,sign"));
    }
}

#[test]
fn output_directory_defaults_to_the_environment_variable() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_submcmc"))
        .args(["figure1"])
        .env("SUBMCMC_OUT", &dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("figure1.csv").exists());
    let echo = std::fs::read_to_string(dir.join("config.resolved")).unwrap();
    assert!(echo.contains(&format!("output.dir = {}", dir.display())));
}

#[test]
fn several_chains_write_one_trace_each() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("chains");
    let out = submcmc(&[
        "--out",
        &out_arg(&dir),
        "--chains",
        "3",
        "--set",
        "data.n=300",
        "--set",
        "iterations=300",
        "--set",
        "burn_in=0",
        "run",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let traces: Vec<Vec<u8>> = (0..3)
        .map(|c| read(dir.join(format!("trace_chain{c}.csv"))))
        .collect();
    assert_ne!(traces[0], traces[1]);
    assert_ne!(traces[1], traces[2]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["chains"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["chains"][2]["chain"], 2);
}

#[test]
fn figure1_table_matches_the_closed_form() {
    let tmp = TempDir::new().unwrap();
    let out = submcmc(&["--out", &out_arg(tmp.path()), "figure1"]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(tmp.path().join("figure1.csv")).unwrap();
    let mut checked = 0;
    for row in rdr.records().map(Result::unwrap) {
        let sigma2: f64 = row[0].parse().unwrap();
        let n: f64 = row[1].parse().unwrap();
        let fraction: f64 = row[4].parse().unwrap();
        assert!((fraction - n * sigma2 / (n * sigma2 + 3.3)).abs() < 1e-12);
        if sigma2 == 0.01 && n == 1e5 {
            assert!((fraction - 0.996_710_854_181_202_0).abs() < 1e-12);
            checked += 1;
        }
    }
    assert_eq!(checked, 1);
}

#[test]
fn figure5_full_data_rung_is_an_mh_run() {
    let tmp = TempDir::new().unwrap();
    let common = [
        "--set",
        "data.n=300",
        "--set",
        "iterations=400",
        "--set",
        "burn_in=100",
        "--set",
        "figure5.acf_lags=20",
    ];
    let fig = tmp.path().join("fig5");
    let mut args = vec![
        "--out".to_string(),
        out_arg(&fig),
        "--set".into(),
        "figure5.targets=0,1".into(),
    ];
    args.extend(common.iter().map(|s| s.to_string()));
    args.push("figure5".into());
    run_ok(&args);
    let mh = tmp.path().join("mh");
    let mut args = vec![
        "--out".to_string(),
        out_arg(&mh),
        "--set".into(),
        "sampler=mh".into(),
    ];
    args.extend(common.iter().map(|s| s.to_string()));
    args.push("run".into());
    run_ok(&args);
    assert_eq!(
        read(fig.join("figure5_trace_target0.csv")),
        read(mh.join("trace_chain0.csv"))
    );
    for f in [
        "figure5_trace_target1.csv",
        "figure5_acf.csv",
        "figure5_iact.csv",
    ] {
        assert!(fig.join(f).exists(), "{f}");
    }
}

#[test]
fn diagnose_summarizes_saved_traces() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    run_ok(&small_pmmh(&out_arg(&run)));
    let diag = tmp.path().join("diag");
    let trace = run.join("trace_chain0.csv");
    let out = submcmc(&[
        "--out",
        &out_arg(&diag),
        "--set",
        "burn_in=50",
        "diagnose",
        &out_arg(&trace),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        read(diag.join("summary_trace_chain0.csv")),
        read(run.join("summary_chain0.csv"))
    );
}

#[test]
fn plan_and_figure234_write_their_tables() {
    let tmp = TempDir::new().unwrap();
    let out = submcmc(&["--out", &out_arg(tmp.path()), "--set", "data.n=500", "plan"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let plan = std::fs::read_to_string(tmp.path().join("plan.csv")).unwrap();
    assert!(plan.starts_with("control_variates,target,n,sigma2_d,m,fraction,zero_variance"));
    let out = submcmc(&[
        "--out",
        &out_arg(tmp.path()),
        "--set",
        "data.n=500",
        "figure234",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let scatter = std::fs::read_to_string(tmp.path().join("figure234_scatter.csv")).unwrap();
    // 2 control-variate kinds × 3 orders × 3 radii panels of 500 points
    assert_eq!(scatter.lines().count(), 1 + 18 * 500);
}
