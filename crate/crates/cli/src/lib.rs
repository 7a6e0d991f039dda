//! Library half of the `csbp-lab` binary: config parsing, subcommand bodies
//! and CSV emission. Every command writes to a caller-supplied writer so the
//! tests can inspect the exact bytes.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use csbp_core::config::{ExperimentConfig, MechanismSpec};
use csbp_core::cumulant::CumulantSolver;
use csbp_core::mechanism::Mechanism;
use csbp_core::parallel::{try_map_replicas, Execution};
use csbp_core::renorm::{Regime, Renormalizer};
use csbp_core::sampler::RngStream;
use csbp_core::simulate::{flow_finite_variation, flow_neveu, path_euler, skeleton_exact};
use csbp_core::mechanism::Kind;
use csbp_core::verify::{run_experiment, ExperimentOutcome, PlotSeries};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error(transparent)]
    Core(#[from] csbp_core::Error),
    #[error("plot series is empty")]
    EmptySeries,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn parse_error(text: &str, e: toml::de::Error) -> CliError {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    CliError::Parse { line, column, message: e.message().to_string() }
}

/// Parses and validates a config file; absent fields get the per-experiment
/// defaults. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let cfg = cfg.with_defaults();
    cfg.validate()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
}

/// Inline TOML table such as `{form = "stable_explosive", alpha = 0.5}`.
pub fn parse_mechanism(text: &str) -> Result<MechanismSpec> {
    #[derive(Deserialize)]
    struct Wrap {
        m: MechanismSpec,
    }
    let doc = format!("m = {text}");
    let w: Wrap = toml::from_str(&doc).map_err(|e| match parse_error(&doc, e) {
        // report columns relative to the user's text
        CliError::Parse { line, column, message } if line == 1 => {
            CliError::Parse { line, column: column.saturating_sub(4).max(1), message }
        }
        other => other,
    })?;
    Ok(w.m)
}

pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("not a number: {s:?}"))))
        .collect()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Necessary).from_writer(w)
}

fn show(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

pub fn classify<W: Write>(mech: &Mechanism, w: W) -> Result<()> {
    let c = mech.classify();
    let mut out = csv_writer(w);
    out.write_record(["property", "value", "source"])?;
    out.write_record(["criticality", &format!("{:?}", c.criticality), ""])?;
    out.write_record(["mean", &format!("{:?}", c.mean), ""])?;
    out.write_record(["variation", &format!("{:?}", c.variation), ""])?;
    for (name, v) in [("persistent", c.persistent), ("non_explosive", c.non_explosive)] {
        let value = v.value.map_or("inconclusive".to_string(), |b| b.to_string());
        out.write_record([name, &value, &format!("{:?}", v.source)])?;
    }
    out.write_record(["rho", &show(c.rho), ""])?;
    out.write_record(["d", &show(c.d_coeff), ""])?;
    out.flush()?;
    Ok(())
}

/// Rows `(t, lambda, value, method)`; the method names the quantity and how
/// it was obtained. Quantities undefined for the mechanism are skipped.
pub fn cumulant<W: Write>(mech: &Mechanism, ts: &[f64], lambdas: &[f64], ode: bool, w: W) -> Result<()> {
    let solver = CumulantSolver::new(mech.clone());
    let how = if solver.uses_closed_form() { "closed" } else { "numeric" };
    let mut out = csv_writer(w);
    out.write_record(["t", "lambda", "value", "method"])?;
    let mut row = |t: f64, lam: f64, v: csbp_core::Result<f64>, what: &str| -> Result<()> {
        if let Ok(v) = v {
            out.write_record([show(t), show(lam), show(v), format!("{what}:{how}")])?;
        }
        Ok(())
    };
    for &t in ts {
        for &lam in lambdas {
            row(t, lam, solver.v_forward(t, lam), "forward")?;
            row(t, lam, solver.v_inverse(t, lam), "inverse")?;
            if ode {
                row(t, lam, solver.ode_ln_v(t, lam).map(f64::exp), "forward_ode")?;
            }
        }
        row(t, f64::NAN, solver.vbar(t), "vbar")?;
        row(t, f64::NAN, solver.vunder(t), "vunder")?;
    }
    out.flush()?;
    Ok(())
}

/// Rows `(regime, lambda0, input, G, Ginv, F)`.
pub fn renorm<W: Write>(mech: &Mechanism, lambda0: Option<f64>, inputs: &[f64], w: W) -> Result<()> {
    let solver = Arc::new(CumulantSolver::new(mech.clone()));
    let rn = match lambda0 {
        Some(l) => Renormalizer::with_anchor(solver, l)?,
        None => Renormalizer::new(solver)?,
    };
    let regime = match rn.regime() {
        Regime::Supercritical => "supercritical",
        Regime::Subcritical => "subcritical",
    };
    let mut out = csv_writer(w);
    out.write_record(["regime", "lambda0", "input", "G", "Ginv", "F"])?;
    for &z in inputs {
        let g = rn.g_eval(z).unwrap_or(f64::NAN);
        let gi = rn.g_inverse(z).unwrap_or(f64::NAN);
        out.write_record([regime.to_string(), show(rn.lambda0()), show(z), show(g), show(gi), show(rn.limit_cdf(z))])?;
    }
    out.flush()?;
    Ok(())
}

pub struct SimulateArgs {
    pub x: f64,
    pub grid: Vec<f64>,
    pub n: u64,
    pub seed: u64,
    /// Euler cutoff; also the flow truncation
    pub epsilon: f64,
    /// Neveu flow threshold time
    pub s_threshold: f64,
    pub flow: bool,
}

/// Rows `(replica, atom_index, x_i, t_i, grid_time, log_X)`. With `flow`
/// the Neveu and finite-variation mechanisms emit one row per atom and grid
/// time; otherwise each replica is a single path (`atom_index = 0`), exact
/// where a transition law is known and Euler otherwise.
pub fn simulate<W: Write>(mech: &Mechanism, args: &SimulateArgs, exec: Execution, w: W) -> Result<()> {
    let root = RngStream::new(args.seed, 0).domain("simulate");
    let fvd = matches!(mech.kind(), Some(Kind::FiniteVarDelta { .. }));
    let neveu = matches!(mech.kind(), Some(Kind::Neveu));
    if args.flow && !(fvd || neveu) {
        return Err(CliError::Usage("flows are available for neveu and finite_var_delta only".into()));
    }
    type Rows = Vec<(usize, f64, f64, Vec<f64>)>;
    let reps: Vec<Rows> = try_map_replicas(exec, args.n, |i| -> csbp_core::Result<Rows> {
        let mut rng = root.child(i).rng();
        if args.flow {
            let fr = if neveu {
                let grid: Vec<f64> = args.grid.iter().copied().filter(|t| *t >= args.s_threshold).collect();
                flow_neveu(args.x, args.s_threshold, args.epsilon, &grid, &mut rng)?
            } else {
                flow_finite_variation(mech, args.x, &args.grid, args.epsilon, &mut rng)?
            };
            return Ok(fr.atoms.into_iter().enumerate().map(|(k, a)| (k, a.x, a.birth, a.log_path)).collect());
        }
        let path = match skeleton_exact(mech, args.x, &args.grid, &mut rng) {
            Err(csbp_core::Error::UnsupportedMechanism(_)) => path_euler(mech, args.x, &args.grid, args.epsilon, &mut rng)?,
            other => other?,
        };
        Ok(vec![(0, args.x, 0.0, path)])
    })?;
    let grid: Vec<f64> = if args.flow && neveu {
        args.grid.iter().copied().filter(|t| *t >= args.s_threshold).collect()
    } else {
        args.grid.clone()
    };
    let mut out = csv_writer(w);
    out.write_record(["replica", "atom_index", "x_i", "t_i", "grid_time", "log_X"])?;
    for (r, rows) in reps.iter().enumerate() {
        for (k, x, birth, path) in rows {
            for (t, lx) in grid.iter().zip(path) {
                out.write_record([r.to_string(), k.to_string(), show(*x), show(*birth), show(*t), show(*lx)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// ECDF of the samples followed by the theoretical overlay, as rows
/// `(curve, x, y)`; the curve column names the overlay law. Returns the row
/// count.
pub fn emit_plot_data<W: Write>(series: &PlotSeries, w: W) -> Result<usize> {
    if series.samples.is_empty() {
        return Err(CliError::EmptySeries);
    }
    let mut xs = series.samples.clone();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut out = csv_writer(w);
    out.write_record(["curve", "x", "y"])?;
    let ecdf = format!("ecdf:{}", series.label);
    for (i, x) in xs.iter().enumerate() {
        out.write_record([ecdf.clone(), show(*x), show((i + 1) as f64 / n)])?;
    }
    for (x, y) in &series.overlay {
        out.write_record([series.overlay_name.clone(), show(*x), show(*y)])?;
    }
    out.flush()?;
    Ok(xs.len() + series.overlay.len())
}

/// Summary rows `(experiment, check, n, statistic, threshold, bias_budget, pass)`.
pub fn write_summary<W: Write>(outcome: &ExperimentOutcome, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["experiment", "check", "n", "statistic", "threshold", "bias_budget", "pass"])?;
    for r in &outcome.reports {
        out.write_record([
            outcome.name.clone(),
            r.label.clone(),
            r.n.to_string(),
            show(r.statistic),
            show(r.threshold),
            show(r.bias_budget),
            r.pass.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rows<W: Write>(outcome: &ExperimentOutcome, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(&outcome.columns)?;
    for row in &outcome.rows {
        out.write_record(row.iter().map(|v| show(*v)))?;
    }
    out.flush()?;
    Ok(())
}

/// Runs one experiment; with `out` set, also writes the summary, the
/// per-replica rows, the run metadata and one plot file per series there.
pub fn verify<W: Write>(cfg: &ExperimentConfig, exec: Execution, out: Option<&Path>, stdout: W) -> Result<ExperimentOutcome> {
    let outcome = run_experiment(cfg, exec)?;
    write_summary(&outcome, stdout)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let name = &outcome.name;
        write_summary(&outcome, std::fs::File::create(dir.join(format!("{name}_summary.csv")))?)?;
        write_rows(&outcome, std::fs::File::create(dir.join(format!("{name}_replicas.csv")))?)?;
        let mut meta = csv_writer(std::fs::File::create(dir.join(format!("{name}_meta.csv")))?);
        meta.write_record(["key", "value"])?;
        meta.write_record(["seed".to_string(), cfg.seed.to_string()])?;
        for (k, v) in &outcome.meta {
            meta.write_record([k.clone(), show(*v)])?;
        }
        meta.flush()?;
        for (k, s) in outcome.series.iter().enumerate() {
            emit_plot_data(s, std::fs::File::create(dir.join(format!("{name}_plot{k}.csv")))?)?;
        }
        std::fs::write(dir.join(format!("{name}_config.toml")), serialize_config(cfg)?)?;
    }
    Ok(outcome)
}
