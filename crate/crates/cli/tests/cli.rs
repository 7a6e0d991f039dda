use std::process::Command;

use csbp_core::config::{ExperimentConfig, MechanismSpec, PiSpec, RegimeSpec};
use csbp_core::mechanism::Mechanism;
use csbp_core::parallel::Execution;
use csbp_core::verify::{Law, PlotSeries};
use csbp_lab::{emit_plot_data, parse_config, parse_mechanism, serialize_config, CliError, SimulateArgs};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csbp-lab"))
}

fn records(bytes: &[u8]) -> Vec<Vec<String>> {
    csv::Reader::from_reader(bytes).records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn minimal_config_defaults() {
    let c = parse_config(r#"experiment = "neveu_gumbel""#).unwrap();
    assert_eq!(c.n, Some(100_000));
    assert_eq!(c.horizon, Some(8.0));
    assert_eq!(c.seed, 0xC5BF);
}

#[test]
fn bad_alpha_is_a_validation_error() {
    let text = "experiment = \"explosion_weibull\"\nmechanism = { form = \"stable_explosive\", alpha = 1.5 }\n";
    match parse_config(text) {
        Err(CliError::Core(csbp_core::Error::Validation { field, .. })) => assert_eq!(field, "mechanism.alpha"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_key_has_position() {
    let text = "experiment = \"neveu_gumbel\"\n\nbogus = 3\n";
    match parse_config(text) {
        Err(CliError::Parse { line, column, message }) => {
            assert_eq!(line, 3);
            assert_eq!(column, 1);
            assert!(message.contains("bogus"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_config("experiment = "), Err(CliError::Parse { line: 1, .. })));
}

#[test]
fn full_config_round_trip() {
    let text = r#"
experiment = "super_individuals"
n = 300
seed = 17
regime = "supercritical"
lambda0 = 0.4
horizon = 10.0
grid = [1.0, 2.0, 5.0, 10.0]
x_max = 1.0
epsilon = 0.001
s_threshold = 1.0
z_floor = -5.0
super_ratio = 50.0
out = "runs/super"

[mechanism]
form = "neveu"
"#;
    let a = parse_config(text).unwrap();
    let b = parse_config(&serialize_config(&a).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.regime, Some(RegimeSpec::Supercritical));

    let mut c = ExperimentConfig::new("finite_mean_subordinator");
    c.mechanism = Some(MechanismSpec::Triple { sigma: 0.0, gamma: -1.0, pi: Some(PiSpec::Expr("exp(-r)*r^-1.5".into())) });
    let c = c.with_defaults();
    assert_eq!(parse_config(&serialize_config(&c).unwrap()).unwrap(), c);
}

#[test]
fn inline_mechanisms() {
    assert_eq!(parse_mechanism(r#"{form = "neveu"}"#).unwrap(), MechanismSpec::Neveu);
    assert_eq!(
        parse_mechanism(r#"{form = "stable_explosive", alpha = 0.5}"#).unwrap(),
        MechanismSpec::StableExplosive { alpha: 0.5 }
    );
    let t = parse_mechanism(r#"{form = "triple", sigma = 0.0, gamma = 0.0, pi = "r^-1.5"}"#).unwrap();
    assert!(t.build().is_ok());
    let t = parse_mechanism(r#"{form = "triple", sigma = 1.0, gamma = 0.0, pi = {kind = "power", c = 1.0, p = 1.5}}"#).unwrap();
    assert!(t.build().is_ok());
    assert!(parse_mechanism(r#"{form = "triple", sigma = 0.0, gamma = 0.0, pi = "system(r)"}"#).unwrap().build().is_err());
    assert!(matches!(parse_mechanism(r#"{form = "nope"}"#), Err(CliError::Parse { .. })));
}

#[test]
fn plot_rows() {
    let s = PlotSeries::with_law("toy", &[0.3, -1.0, 2.0, 0.0, 1.0], &Law::Gumbel);
    let mut buf = Vec::new();
    assert_eq!(emit_plot_data(&s, &mut buf).unwrap(), 205);
    let rows = records(&buf);
    assert_eq!(rows.len(), 205);
    assert_eq!(rows[0], ["ecdf:toy", "-1", "0.2"]);
    assert_eq!(rows[4][2], "1");
    for r in &rows[5..] {
        assert_eq!(r[0], Law::Gumbel.name());
        let (x, y): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((y - (-(-x).exp()).exp()).abs() < 1e-12);
    }
    assert!((Law::Gumbel.quantile((-1f64).exp())).abs() < 1e-12);
    let empty = PlotSeries::with_law("none", &[], &Law::Gumbel);
    assert!(matches!(emit_plot_data(&empty, Vec::new()), Err(CliError::EmptySeries)));
}

#[test]
fn cumulant_rows() {
    let mut buf = Vec::new();
    csbp_lab::cumulant(&Mechanism::neveu(), &[1.0], &[0.5, 2.0], true, &mut buf).unwrap();
    let rows = records(&buf);
    let fwd: f64 = rows.iter().find(|r| r[1] == "2" && r[3] == "forward:closed").unwrap()[2].parse().unwrap();
    assert!((fwd - 2f64.powf((-1f64).exp())).abs() < 1e-12);
    let ode: f64 = rows.iter().find(|r| r[1] == "2" && r[3] == "forward_ode:closed").unwrap()[2].parse().unwrap();
    assert!((ode / fwd - 1.0).abs() < 1e-6);
}

#[test]
fn renorm_rows() {
    let mut buf = Vec::new();
    csbp_lab::renorm(&Mechanism::log_shift(), None, &[0.5, 1.0], &mut buf).unwrap();
    let rows = records(&buf);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "subcritical");
    let g: f64 = rows[1][3].parse().unwrap();
    assert!((g - 1.0 / 2f64.ln()).abs() < 1e-10);
    let ginv: f64 = rows[1][4].parse().unwrap();
    assert!((ginv / (1f64.exp() - 1.0) - 1.0).abs() < 1e-8);
}

#[test]
fn simulate_is_reproducible() {
    let args = SimulateArgs { x: 1.0, grid: vec![1.0, 2.0], n: 20, seed: 9, epsilon: 0.01, s_threshold: 1.0, flow: true };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    csbp_lab::simulate(&Mechanism::neveu(), &args, Execution::Sequential, &mut a).unwrap();
    csbp_lab::simulate(&Mechanism::neveu(), &args, Execution::Parallel { threads: 3 }, &mut b).unwrap();
    assert_eq!(a, b);
    let rows = records(&a);
    assert!(rows.iter().all(|r| r.len() == 6));
    assert!(rows.iter().any(|r| r[0] == "19"));
    let path = SimulateArgs { flow: false, ..args };
    let mut c = Vec::new();
    csbp_lab::simulate(&Mechanism::feller_logistic(), &path, Execution::Sequential, &mut c).unwrap();
    assert_eq!(records(&c).len(), 40);
}

#[test]
fn verify_exit_codes_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin().args(["verify", "extremal_algebra", "--n", "2000", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary = records(&ok.stdout);
    assert!(!summary.is_empty() && summary.iter().all(|r| r.len() == 7 && r[0] == "extremal_algebra"));
    for f in ["summary", "replicas", "meta"] {
        assert!(dir.path().join(format!("extremal_algebra_{f}.csv")).exists(), "{f}");
    }
    let cfg = dir.path().join("extremal_algebra_config.toml");
    let again = bin().arg("verify").arg("--config").arg(&cfg).args(["--out"]).arg(dir.path().join("b")).output().unwrap();
    assert_eq!(again.stdout, ok.stdout);

    // at t = 0.5 the finite-horizon bias is far outside the budget
    let short = dir.path().join("short.toml");
    std::fs::write(&short, "experiment = \"neveu_gumbel\"\nn = 20000\nhorizon = 0.5\n").unwrap();
    let fail = bin().arg("verify").arg("--config").arg(&short).args(["--threads", "1"]).output().unwrap();
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stdout).contains(",false"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "experiment = \"neveu_gumbel\"\nbogus = 1\n").unwrap();
    let cfg_err = bin().arg("verify").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(cfg_err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&cfg_err.stderr).contains("line 2"));
    assert_eq!(bin().args(["verify", "no_such_experiment"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn list_and_classify() {
    let out = bin().arg("list-experiments").output().unwrap();
    let names = String::from_utf8(out.stdout).unwrap();
    assert_eq!(names.lines().count(), csbp_core::verify::EXPERIMENTS.len());
    let out = bin().args(["classify", "--mechanism", r#"{form = "stable_explosive", alpha = 0.5}"#]).output().unwrap();
    assert!(out.status.success());
    let rows = records(&out.stdout);
    assert_eq!(rows.iter().find(|r| r[0] == "non_explosive").unwrap()[1], "false");
    let out = bin().args(["classify", "--mechanism", r#"{form = "stable_explosive", alpha = 1.5}"#]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn threads_env_fallback() {
    let a = bin().args(["simulate", "--n", "5", "--seed", "3"]).env("CSBP_LAB_THREADS", "2").output().unwrap();
    let b = bin().args(["simulate", "--n", "5", "--seed", "3", "--threads", "1"]).output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}
