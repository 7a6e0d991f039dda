//! Goodness-of-fit machinery and the named verification experiments.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

use crate::config::{ExperimentConfig, MechanismSpec};
use crate::cumulant::CumulantSolver;
use crate::error::{domain, invalid, Error, Result};
use crate::extremal::{
    detect_super_individuals, fdd_probability, markov_jump_simulate, max_merge, records_from_points, Cdf, Powered,
    SuperCriterion,
};
use crate::mechanism::{Kind, Mechanism};
use crate::parallel::{try_map_replicas, Execution};
use crate::renorm::Renormalizer;
use crate::sampler::{sample_ppp, RngStream, Tail};
use crate::simulate::{explosion_time, flow_finite_variation, flow_neveu, marginal_exact};

/// 5% asymptotic one-sample KS critical value.
pub fn ks_critical(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// 5% asymptotic two-sample critical value for equal sizes.
pub fn ks_critical_two_sample(n: usize, m: usize) -> f64 {
    1.36 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|v| v.is_nan()) {
        return Err(domain("samples contain NaN"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// sup_z |F_n(z) − F(z)|, taking both one-sided gaps at every sample.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.len() < 10 {
        return Err(Error::TooFewSamples { need: 10, got: samples.len() });
    }
    let s = sorted_copy(samples)?;
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        if f.is_nan() {
            return Err(domain(format!("reference cdf is NaN at {x}")));
        }
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<f64> {
    for s in [a, b] {
        if s.len() < 10 {
            return Err(Error::TooFewSamples { need: 10, got: s.len() });
        }
    }
    let (a, b) = (sorted_copy(a)?, sorted_copy(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let z = a[i].min(b[j]);
        while i < a.len() && a[i] <= z {
            i += 1;
        }
        while j < b.len() && b[j] <= z {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Reference limit laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    /// Λ(z) = exp(−e^{−z})
    Gumbel,
    /// exp(−(z/scale)^{−β}) on z > 0
    Frechet { beta: f64, scale: f64 },
    /// 1 − exp(−t^β) on t > 0
    Weibull { beta: f64 },
    /// exp(1 − e^{1/z}) on z > 0
    LogShift,
}

impl Law {
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Law::Gumbel => -(-p.ln()).ln(),
            Law::Frechet { beta, scale } => scale * (-p.ln()).powf(-1.0 / beta),
            Law::Weibull { beta } => (-(-p).ln_1p()).powf(1.0 / beta),
            Law::LogShift => 1.0 / (-p.ln()).ln_1p(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Law::Gumbel => "gumbel".into(),
            Law::Frechet { beta, scale } => format!("frechet(beta={beta},scale={scale})"),
            Law::Weibull { beta } => format!("weibull(beta={beta})"),
            Law::LogShift => "logshift_limit".into(),
        }
    }
}

impl Cdf for Law {
    fn cdf(&self, z: f64) -> f64 {
        match *self {
            Law::Gumbel => (-(-z).exp()).exp(),
            Law::Weibull { beta } => {
                if z > 0.0 {
                    -(-z.powf(beta)).exp_m1()
                } else {
                    0.0
                }
            }
            _ => (-self.q(z)).exp(),
        }
    }

    fn q(&self, z: f64) -> f64 {
        match *self {
            Law::Gumbel => (-z).exp(),
            Law::Frechet { beta, scale } => {
                if z > 0.0 {
                    (z / scale).powf(-beta)
                } else {
                    f64::INFINITY
                }
            }
            Law::LogShift => {
                if z > 0.0 {
                    (1.0 / z).exp_m1()
                } else {
                    f64::INFINITY
                }
            }
            Law::Weibull { .. } => -self.cdf(z).ln(),
        }
    }

    fn q_inverse(&self, q: f64, above: f64) -> f64 {
        match *self {
            Law::Gumbel => -q.ln(),
            Law::Frechet { beta, scale } => scale * q.powf(-1.0 / beta),
            Law::LogShift => 1.0 / q.ln_1p(),
            Law::Weibull { .. } => crate::sampler::invert_decreasing(|z| self.q(z), q, above),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Ks,
    TwoSampleKs,
    AbsError,
    RelError,
    /// a frequency that must stay small
    Fraction,
    /// |estimate − target| against a standard-error multiple
    MeanDeviation,
}

/// One pass/fail line: pass ⟺ statistic ≤ threshold + bias_budget.
#[derive(Debug, Clone, PartialEq)]
pub struct KsReport {
    pub label: String,
    pub kind: CheckKind,
    pub n: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub bias_budget: f64,
    pub pass: bool,
}

impl KsReport {
    pub fn new(label: impl Into<String>, kind: CheckKind, n: usize, statistic: f64, threshold: f64, bias_budget: f64) -> Self {
        let pass = statistic <= threshold + bias_budget;
        KsReport { label: label.into(), kind, n, statistic, threshold, bias_budget, pass }
    }

    /// KS against the 1.36/√n critical value, with the remainder of `total` as budget.
    fn ks_within(label: &str, n: usize, statistic: f64, total: f64) -> Self {
        let thr = ks_critical(n);
        KsReport::new(label, CheckKind::Ks, n, statistic, thr, (total - thr).max(0.0))
    }
}

/// Sorted samples with an overlay of the reference law at 200 quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub samples: Vec<f64>,
    pub overlay_name: String,
    pub overlay: Vec<(f64, f64)>,
}

impl PlotSeries {
    pub fn with_law(label: &str, samples: &[f64], law: &Law) -> Self {
        let mut s: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
        s.sort_by(f64::total_cmp);
        let overlay = (0..200)
            .map(|k| {
                let p = (k as f64 + 0.5) / 200.0;
                (law.quantile(p), p)
            })
            .collect();
        PlotSeries { label: label.into(), samples: s, overlay_name: law.name(), overlay }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub name: String,
    pub n: usize,
    pub reports: Vec<KsReport>,
    /// per-replica table
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// horizon, truncation and bias figures
    pub meta: Vec<(String, f64)>,
    pub series: Vec<PlotSeries>,
}

impl ExperimentOutcome {
    fn new(name: &str, n: usize, columns: &[&str]) -> Self {
        ExperimentOutcome {
            name: name.into(),
            n,
            reports: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            meta: Vec::new(),
            series: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

pub const EXPERIMENTS: &[&str] = &[
    "neveu_gumbel",
    "neveu_flow_records",
    "explosion_weibull",
    "explosion_records",
    "extinction_frechet",
    "logshift_extremal",
    "grey_martingale",
    "finite_mean_subordinator",
    "finite_variation_no_super",
    "nonpersistent_records",
    "extremal_algebra",
    "super_individuals",
];

pub fn default_horizon(name: &str) -> Option<f64> {
    match name {
        "neveu_gumbel" | "logshift_extremal" => Some(8.0),
        "grey_martingale" | "super_individuals" => Some(10.0),
        "finite_mean_subordinator" | "finite_variation_no_super" => Some(12.0),
        _ => None,
    }
}

/// Replica count used when the config leaves `n` unset.
pub fn default_replicas(name: &str) -> u64 {
    match name {
        "finite_variation_no_super" => 200,
        "super_individuals" => 500,
        _ => crate::config::DEFAULT_N,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    let cfg = cfg.clone().with_defaults();
    cfg.validate()?;
    let ctx = Ctx { cfg: &cfg, exec, root: RngStream::new(cfg.seed, 0).domain(&cfg.experiment) };
    match cfg.experiment.as_str() {
        "neveu_gumbel" => neveu_gumbel(&ctx),
        "neveu_flow_records" => neveu_flow_records(&ctx),
        "explosion_weibull" => explosion_weibull(&ctx),
        "explosion_records" => explosion_records(&ctx),
        "extinction_frechet" => subcritical_records(&ctx, 1.0, 1.0 / 16.0),
        "nonpersistent_records" => subcritical_records(&ctx, 0.5, 1.0),
        "logshift_extremal" => logshift_extremal(&ctx),
        "grey_martingale" => grey_martingale(&ctx),
        "finite_mean_subordinator" => finite_mean_subordinator(&ctx),
        "finite_variation_no_super" => finite_variation_no_super(&ctx),
        "extremal_algebra" => extremal_algebra(&ctx),
        "super_individuals" => super_individuals(&ctx),
        other => Err(Error::UnknownExperiment(other.into())),
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    exec: Execution,
    root: RngStream,
}

impl Ctx<'_> {
    fn n(&self) -> usize {
        self.cfg.n.unwrap_or_else(|| default_replicas(&self.cfg.experiment)) as usize
    }

    fn horizon(&self) -> f64 {
        self.cfg.horizon.expect("filled by with_defaults")
    }

    /// Per-replica values from `f(rng)`, each replica on its own substream.
    fn replicate<T, F>(&self, tag: &str, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync + Send,
    {
        let stream = self.root.domain(tag);
        try_map_replicas(self.exec, n as u64, |i| f(&mut stream.child(i).rng()))
    }

    /// The experiment's mechanism family parameter, checked against `expect`.
    fn family(&self, default: Kind) -> Result<Kind> {
        let Some(spec) = &self.cfg.mechanism else { return Ok(default) };
        let kind = spec.build()?.kind().ok_or_else(|| invalid("mechanism", "this experiment needs a closed form"))?;
        if std::mem::discriminant(&kind) != std::mem::discriminant(&default) {
            return Err(invalid(
                "mechanism",
                format!("`{}` runs on {:?}", self.cfg.experiment, MechanismSpec::from_kind(default)),
            ));
        }
        Ok(kind)
    }
}

fn indexed(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().enumerate().map(|(i, v)| vec![i as f64, *v]).collect()
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn neveu_gumbel(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let (n, t) = (ctx.n(), ctx.horizon());
    ctx.family(Kind::Neveu)?;
    let mech = Mechanism::neveu();
    let x = ctx.cfg.x_max.unwrap_or(1.0);
    let scale = (-t).exp();
    let z = ctx.replicate("marginal", n, |rng| Ok(scale * marginal_exact(&mech, x, t, rng)?))?;
    let law = Powered { inner: Law::Gumbel, power: x };
    let d = ks_distance(&z, |v| law.cdf(v))?;
    let mut out = ExperimentOutcome::new("neveu_gumbel", n, &["replica", "scaled_log_x"]);
    out.reports.push(KsReport::ks_within("e^-t log X_t(x) vs Gumbel^x", n, d, 0.02));
    out.meta.push(("horizon".into(), t));
    out.rows = indexed(&z);
    out.series.push(PlotSeries::with_law("scaled_log_x", &z, &Law::Gumbel));
    Ok(out)
}

fn neveu_flow_records(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    let x_max = ctx.cfg.x_max.unwrap_or(1.0);
    let floor = ctx.cfg.z_floor.unwrap_or(-5.0);
    let tail = Tail::Exponential { scale: 1.0 };
    let (a, b) = (0.1 * x_max, x_max);
    let draws = ctx.replicate("ppp", n, |rng| {
        let rp = records_from_points(&sample_ppp(&tail, x_max, floor, rng)?);
        Ok((rp.value(x_max), rp.jumps_in(a, b) as f64, rp.is_monotone()))
    })?;
    let z: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let law = Powered { inner: Law::Gumbel, power: x_max };
    let d = ks_distance(&z, |v| law.cdf(v))?;
    let mut out = ExperimentOutcome::new("neveu_flow_records", n, &["replica", "z_at_x_max", "jumps_in_window"]);
    out.reports.push(KsReport::ks_within("records Z(x_max) vs Gumbel^x", n, d, 0.01));
    let m = draws.iter().map(|d| d.1).sum::<f64>() / n as f64;
    let target = (b / a).ln();
    out.reports.push(KsReport::new("mean record jumps on (0.1x,x] vs log 10", CheckKind::RelError, n, (m - target).abs() / target, 0.05, 0.0));
    let broken = draws.iter().filter(|d| !d.2).count();
    out.reports.push(KsReport::new("record paths violating monotonicity", CheckKind::Fraction, n, broken as f64 / n as f64, 0.0, 0.0));
    out.meta.push(("z_floor".into(), floor));
    out.meta.push(("floor_truncation_probability".into(), (-x_max * (-floor).exp()).exp()));
    out.rows = draws.iter().enumerate().map(|(i, d)| vec![i as f64, d.0, d.1]).collect();
    out.series.push(PlotSeries::with_law("z_at_x_max", &z, &Law::Gumbel));
    Ok(out)
}

fn explosive_alpha(ctx: &Ctx) -> Result<f64> {
    match ctx.family(Kind::StableExplosive { alpha: 0.5 })? {
        Kind::StableExplosive { alpha } => Ok(alpha),
        _ => unreachable!(),
    }
}

fn explosion_weibull(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    let alpha = explosive_alpha(ctx)?;
    let k = 1.0 / (1.0 - alpha);
    let mech = Mechanism::stable_explosive(alpha)?;
    let x = ctx.cfg.x_max.unwrap_or(1.0);
    let xi = ctx.replicate("explosion", n, |rng| explosion_time(&mech, x, rng))?;
    // P(ξ_x ≤ t) = 1 − exp(−x t^k)
    let d = ks_distance(&xi, |t| if t > 0.0 { -(-x * t.powf(k)).exp_m1() } else { 0.0 })?;
    let mut out = ExperimentOutcome::new("explosion_weibull", n, &["replica", "explosion_time"]);
    out.reports.push(KsReport::ks_within("explosion time vs Weibull", n, d, 0.006));
    let numeric = CumulantSolver::numeric(mech.clone());
    for t in [0.5f64, 1.0, 3.0] {
        let exact = t.powf(k);
        let v = numeric.vunder(t)?;
        out.reports.push(KsReport::new(format!("numeric vunder({t}) vs t^k"), CheckKind::RelError, 1, (v - exact).abs() / exact, 1e-6, 0.0));
    }
    out.rows = indexed(&xi);
    out.series.push(PlotSeries::with_law("explosion_time", &xi, &Law::Weibull { beta: k }));
    Ok(out)
}

fn explosion_records(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    let alpha = explosive_alpha(ctx)?;
    let k = 1.0 / (1.0 - alpha);
    let mech = Mechanism::stable_explosive(alpha)?;
    let x_max = ctx.cfg.x_max.unwrap_or(1.0);
    let floor = ctx.cfg.z_floor.unwrap_or(0.25);
    let solver = Arc::new(CumulantSolver::new(mech.clone()));
    let numeric = CumulantSolver::numeric(mech);
    let mut out = ExperimentOutcome::new("explosion_records", n, &["replica", "z_at_x_max"]);
    let mut worst: f64 = 0.0;
    for z in [0.5, 1.0, 2.0, 4.0] {
        let a = solver.vunder(1.0 / z)?;
        worst = worst.max((numeric.vunder(1.0 / z)? - a).abs() / a);
    }
    out.reports.push(KsReport::new("numeric vs closed vunder(1/z)", CheckKind::RelError, 4, worst, 1e-6, 0.0));
    let s = solver.clone();
    let tail = Tail::custom(move |z| if z > 0.0 { s.vunder(1.0 / z).unwrap_or(f64::NAN) } else { f64::INFINITY });
    let z = ctx.replicate("ppp", n, |rng| Ok(records_from_points(&sample_ppp(&tail, x_max, floor, rng)?).value(x_max)))?;
    let law = Law::Frechet { beta: k, scale: 1.0 };
    let lx = Powered { inner: law, power: x_max };
    let d = ks_distance(&z, |v| lx.cdf(v))?;
    out.reports.push(KsReport::ks_within("records of mu_bar(z)=vunder(1/z) vs Frechet", n, d, 0.006));
    out.meta.push(("z_floor".into(), floor));
    out.meta.push(("floor_truncation_probability".into(), (-x_max * floor.powf(-k)).exp()));
    out.rows = indexed(&z);
    out.series.push(PlotSeries::with_law("z_at_x_max", &z, &law));
    Ok(out)
}

/// Ψ(u) = αu^{α+1}: v̄_t = (α²t)^{−1/α}, and records of μ̄ = v̄ are extremal-F
/// with F(z) = exp(−(α²z)^{−1/α}).
fn subcritical_records(ctx: &Ctx, default_alpha: f64, default_floor: f64) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    let alpha = match ctx.family(Kind::StableSubcritical { alpha: default_alpha })? {
        Kind::StableSubcritical { alpha } => alpha,
        _ => unreachable!(),
    };
    let mech = Mechanism::stable_subcritical(alpha)?;
    let x_max = ctx.cfg.x_max.unwrap_or(1.0);
    let floor = ctx.cfg.z_floor.unwrap_or(default_floor);
    let name = ctx.cfg.experiment.clone();
    let mut out = ExperimentOutcome::new(&name, n, &["replica", "z_at_x_max"]);
    let numeric = CumulantSolver::numeric(mech.clone());
    let vbar_exact = |t: f64| (alpha * alpha * t).powf(-1.0 / alpha);
    for t in [0.5, 1.0, 2.0, 5.0] {
        let e = vbar_exact(t);
        let v = numeric.vbar(t)?;
        out.reports.push(KsReport::new(format!("numeric vbar({t}) relative error"), CheckKind::RelError, 1, (v - e).abs() / e, 1e-6, 0.0));
    }
    let solver = Arc::new(CumulantSolver::new(mech));
    let s = solver.clone();
    let tail = Tail::custom(move |z| if z > 0.0 { s.vbar(z).unwrap_or(f64::NAN) } else { f64::INFINITY });
    let z = ctx.replicate("ppp", n, |rng| Ok(records_from_points(&sample_ppp(&tail, x_max, floor, rng)?).value(x_max)))?;
    let law = Law::Frechet { beta: 1.0 / alpha, scale: 1.0 / (alpha * alpha) };
    let lx = Powered { inner: law, power: x_max };
    let d = ks_distance(&z, |v| lx.cdf(v))?;
    out.reports.push(KsReport::ks_within("records of mu_bar(z)=vbar(z) vs Frechet", n, d, 0.006));
    out.meta.push(("z_floor".into(), floor));
    out.meta.push(("floor_truncation_probability".into(), (-x_max * vbar_exact(floor)).exp()));
    out.rows = indexed(&z);
    out.series.push(PlotSeries::with_law("z_at_x_max", &z, &law));
    Ok(out)
}

fn logshift_extremal(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let (n, t) = (ctx.n(), ctx.horizon());
    ctx.family(Kind::LogShift)?;
    let mech = Mechanism::log_shift();
    let anchor = std::f64::consts::E - 1.0;
    let numeric = Arc::new(CumulantSolver::numeric(mech.clone()));
    let closed = Arc::new(CumulantSolver::new(mech.clone()));
    let rn_num = Renormalizer::with_anchor(numeric.clone(), anchor)?;
    let rn = Renormalizer::with_anchor(closed.clone(), anchor)?;
    let mut out = ExperimentOutcome::new("logshift_extremal", n, &["replica", "statistic"]);

    let mut g_err: f64 = 0.0;
    for z in [0.01f64, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0] {
        g_err = g_err.max((rn_num.g_eval(z)? - 1.0 / z.ln_1p()).abs());
    }
    out.reports.push(KsReport::new("numeric G(z) vs 1/log(1+z)", CheckKind::AbsError, 8, g_err, 1e-10, 0.0));
    let mut gi_err: f64 = 0.0;
    for z in [0.2f64, 0.5, 1.0, 2.0, 5.0, 20.0] {
        let e = (1.0 / z).exp_m1();
        gi_err = gi_err.max((rn_num.g_inverse(z)? - e).abs() / e);
    }
    out.reports.push(KsReport::new("numeric G^-1(z) vs e^(1/z)-1", CheckKind::RelError, 6, gi_err, 1e-8, 0.0));
    let mut sg: f64 = 0.0;
    for (s, u, lam) in [(0.5, 1.0, 2.0), (1.0, 2.0, 0.3), (0.25, 3.0, 10.0), (2.0, -1.0, 1.5)] {
        let composed = numeric.ln_v(u, numeric.ln_v(s, lam)?.exp())?.exp();
        let direct = closed.ln_v(s + u, lam)?.exp();
        let single = numeric.ln_v(s, lam)?.exp();
        let single_closed = closed.ln_v(s, lam)?.exp();
        sg = sg.max((composed - direct).abs() / direct).max((single - single_closed).abs() / single_closed);
    }
    out.reports.push(KsReport::new("numeric semigroup vs closed cumulant", CheckKind::RelError, 4, sg, 1e-8, 0.0));

    let x = ctx.cfg.x_max.unwrap_or(1.0);
    let z = ctx.replicate("marginal", n, |rng| Ok(rn.renormalized_statistic(t, marginal_exact(&mech, x, t, rng)?)))?;
    let lx = Powered { inner: Law::LogShift, power: x };
    let d = ks_distance(&z, |v| lx.cdf(v))?;
    out.reports.push(KsReport::ks_within("e^t G(1/X_t) vs F(z)=exp(1-e^(1/z))", n, d, 0.02));
    out.meta.push(("horizon".into(), t));
    out.rows = indexed(&z);
    out.series.push(PlotSeries::with_law("statistic", &z, &Law::LogShift));
    Ok(out)
}

fn grey_martingale(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    ctx.family(Kind::Neveu)?;
    let mech = Mechanism::neveu();
    let solver = CumulantSolver::new(mech.clone());
    let (x, lam) = (ctx.cfg.x_max.unwrap_or(1.0), ctx.cfg.lambda0.unwrap_or(0.5));
    let target = (-x * lam).exp();
    let mut out = ExperimentOutcome::new("grey_martingale", n, &["replica", "log_m_t2", "log_m_t4", "log_w_horizon"]);
    // ln(v_{−t}(λ) X_t) per replica
    let log_w = |t: f64, tag: &str| -> Result<Vec<f64>> {
        let lv = solver.ln_v(-t, lam)?;
        ctx.replicate(tag, n, |rng| Ok(lv + marginal_exact(&mech, x, t, rng)?))
    };
    let mut cols = Vec::new();
    for t in [2.0, 4.0] {
        let w = log_w(t, &format!("t{t}"))?;
        let m: Vec<f64> = w.iter().map(|l| (-l.exp()).exp()).collect();
        let (mean, se) = mean_and_se(&m);
        out.reports.push(KsReport::new(format!("E exp(-v_-t X_t) at t={t}"), CheckKind::MeanDeviation, n, (mean - target).abs(), 3.0 * se, 0.0));
        cols.push(w);
    }
    let t = ctx.horizon();
    let w = log_w(t, "dichotomy")?;
    let (lo, hi) = (1e-3f64.ln(), 1e3f64.ln());
    let middle = w.iter().filter(|l| **l > lo && **l < hi).count() as f64 / n as f64;
    out.reports.push(KsReport::new(format!("fraction of v_-t X_t in (1e-3,1e3) at t={t}"), CheckKind::Fraction, n, middle, 0.01, 0.0));
    let zero = w.iter().filter(|l| **l <= lo).count() as f64 / n as f64;
    let se = (target * (1.0 - target) / n as f64).sqrt();
    out.reports.push(KsReport::new("P(W=0) vs exp(-x lambda)", CheckKind::MeanDeviation, n, (zero - target).abs(), 3.0 * se, 0.01));
    out.rows = (0..n).map(|i| vec![i as f64, cols[0][i], cols[1][i], w[i]]).collect();
    out.meta.push(("horizon".into(), t));
    Ok(out)
}

fn finite_mean_subordinator(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let (n, t) = (ctx.n(), ctx.horizon());
    ctx.family(Kind::FellerLogistic)?;
    let mech = Mechanism::feller_logistic();
    let solver = CumulantSolver::new(mech.clone());
    let p0 = solver.classification().psi_prime_0;
    let (x, lam) = (ctx.cfg.x_max.unwrap_or(1.0), ctx.cfg.lambda0.unwrap_or(0.5));
    let lv = solver.ln_v(-t, lam)?;
    let w = ctx.replicate("marginal", n, |rng| Ok(lv + marginal_exact(&mech, x, t, rng)?))?;
    let mut out = ExperimentOutcome::new("finite_mean_subordinator", n, &["replica", "log_w"]);
    for theta in [0.5f64, 1.0, 2.0] {
        let m: Vec<f64> = w.iter().map(|l| (-(theta.ln() + l).exp()).exp()).collect();
        let (mean, se) = mean_and_se(&m);
        let target = (-x * solver.ln_v(theta.ln() / -p0, lam)?.exp()).exp();
        out.reports.push(KsReport::new(
            format!("Laplace transform of W at theta={theta}"),
            CheckKind::MeanDeviation,
            n,
            (mean - target).abs(),
            3.0 * se,
            0.005,
        ));
    }
    out.meta.push(("horizon".into(), t));
    out.rows = indexed(&w);
    Ok(out)
}

fn uniform_grid(from: f64, to: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| from + (to - from) * k as f64 / steps as f64).collect()
}

fn super_criterion(ctx: &Ctx) -> SuperCriterion {
    SuperCriterion { ratio: ctx.cfg.super_ratio.unwrap_or(100.0), ..SuperCriterion::default() }
}

fn finite_variation_no_super(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    let t = ctx.horizon();
    let d = match ctx.family(Kind::FiniteVarDelta { d: 2.0 })? {
        Kind::FiniteVarDelta { d } => d,
        _ => unreachable!(),
    };
    let mech = Mechanism::finite_var_delta(d)?;
    let x_max = ctx.cfg.x_max.unwrap_or(5.0);
    let eps = ctx.cfg.epsilon.unwrap_or(0.5);
    let grid = ctx.cfg.grid.clone().unwrap_or_else(|| uniform_grid(0.0, t, t.ceil() as usize));
    let rn = Renormalizer::new(Arc::new(CumulantSolver::new(mech.clone())))?;
    let crit = super_criterion(ctx);
    let rows = ctx.replicate("flow", n, |rng| {
        let fr = flow_finite_variation(&mech, x_max, &grid, eps, rng)?;
        let det = detect_super_individuals(&fr, &rn, &crit);
        Ok(vec![fr.atoms.len() as f64, det.record_jump_xs.len() as f64, det.empirical_super_xs.len() as f64, fr.truncation.bias_bound])
    })?;
    let nonempty = rows.iter().filter(|r| r[2] > 0.0).count() as f64 / n as f64;
    let mut out = ExperimentOutcome::new("finite_variation_no_super", n, &["replica", "atoms", "records", "super", "bias_bound"]);
    out.reports.push(KsReport::new("replicas with a detected super-individual", CheckKind::Fraction, n, nonempty, 0.01, 0.0));
    out.meta.push(("horizon".into(), grid[grid.len() - 1]));
    out.meta.push(("epsilon".into(), eps));
    out.meta.push(("bias_bound".into(), rows.first().map_or(0.0, |r| r[3])));
    out.rows = rows.into_iter().enumerate().map(|(i, mut r)| {
        r.insert(0, i as f64);
        r
    }).collect();
    Ok(out)
}

fn extremal_algebra(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    let floor = ctx.cfg.z_floor.unwrap_or(0.05);
    let law = Law::Frechet { beta: 1.0, scale: 1.0 };
    let tail = Tail::Power { scale: 1.0, beta: 1.0 };
    let mut out = ExperimentOutcome::new("extremal_algebra", n, &["replica", "z_records", "z_markov", "z_merged"]);
    let vectors: [(&[f64], &[f64]); 3] = [(&[1.0, 2.0], &[1.5, 2.5]), (&[0.5, 1.0, 2.0], &[1.0, 0.8, 3.0]), (&[1.0, 3.0], &[2.0, 2.0])];
    for (k, (xs, zs)) in vectors.iter().enumerate() {
        let exact = fdd_probability(&law, xs, zs)?;
        let x_max = xs[xs.len() - 1];
        let hits = ctx.replicate(&format!("fdd{k}"), n, |rng| {
            let rp = records_from_points(&sample_ppp(&tail, x_max, floor, rng)?);
            Ok(xs.iter().zip(zs.iter()).all(|(x, z)| rp.value(*x) <= *z))
        })?;
        let p = hits.iter().filter(|h| **h).count() as f64 / n as f64;
        out.reports.push(KsReport::new(format!("fdd {xs:?} <= {zs:?} (exact {exact:.4})"), CheckKind::AbsError, n, (p - exact).abs(), 0.01, 0.0));
    }
    let recs = ctx.replicate("records", n, |rng| Ok(records_from_points(&sample_ppp(&tail, 1.0, floor, rng)?).value(1.0)))?;
    let markov = ctx.replicate("markov", n, |rng| Ok(markov_jump_simulate(&law, 1.0, floor, rng)?.value(1.0)))?;
    let d2 = two_sample_ks(&recs, &markov)?;
    let thr2 = ks_critical_two_sample(n, n);
    out.reports.push(KsReport::new("markov jump chain vs records, Z(1)", CheckKind::TwoSampleKs, n, d2, thr2, (0.01 - thr2).max(0.0)));
    let m = 4;
    let part = Powered { inner: law, power: 1.0 / m as f64 };
    let merged = ctx.replicate("merge", n, |rng| {
        let mut acc = markov_jump_simulate(&part, 1.0, floor, rng)?;
        for _ in 1..m {
            acc = max_merge(&acc, &markov_jump_simulate(&part, 1.0, floor, rng)?)?;
        }
        Ok(acc.value(1.0))
    })?;
    let d = ks_distance(&merged, |v| law.cdf(v))?;
    out.reports.push(KsReport::ks_within("max of 4 extremal-F^(1/4) vs F", n, d, 0.01));
    out.meta.push(("z_floor".into(), floor));
    out.rows = (0..n).map(|i| vec![i as f64, recs[i], markov[i], merged[i]]).collect();
    out.series.push(PlotSeries::with_law("z_merged", &merged, &law));
    Ok(out)
}

fn super_individuals(ctx: &Ctx) -> Result<ExperimentOutcome> {
    let n = ctx.n();
    ctx.family(Kind::Neveu)?;
    let t = ctx.horizon();
    let s = ctx.cfg.s_threshold.unwrap_or(1.0);
    let eps = ctx.cfg.epsilon.unwrap_or(1e-3);
    let x_max = ctx.cfg.x_max.unwrap_or(1.0);
    let grid = ctx.cfg.grid.clone().unwrap_or_else(|| uniform_grid(s, t, (t - s).ceil().max(1.0) as usize));
    let solver = Arc::new(CumulantSolver::new(Mechanism::neveu()));
    let rn_a = Renormalizer::with_anchor(solver.clone(), (-1f64).exp())?;
    let rn_b = Renormalizer::with_anchor(solver, ctx.cfg.lambda0.unwrap_or(0.5))?;
    let crit = super_criterion(ctx);
    let gap = 2f64.ln();
    let rows = ctx.replicate("flow", n, |rng| {
        let fr = flow_neveu(x_max, s, eps, &grid, rng)?;
        let a = detect_super_individuals(&fr, &rn_a, &crit);
        let b = detect_super_individuals(&fr, &rn_b, &crit);
        let big: Vec<_> = a.atoms.iter().filter(|v| v.is_record && v.ln_gap > gap).collect();
        let flagged = big.iter().filter(|v| v.is_super).count();
        Ok(vec![
            fr.atoms.len() as f64,
            a.record_jump_xs.len() as f64,
            big.len() as f64,
            flagged as f64,
            if a.record_jump_xs == b.record_jump_xs { 0.0 } else { 1.0 },
            fr.truncation.bias_bound,
        ])
    })?;
    let total: f64 = rows.iter().map(|r| r[2]).sum();
    let flagged: f64 = rows.iter().map(|r| r[3]).sum();
    let miss = if total > 0.0 { 1.0 - flagged / total } else { f64::NAN };
    let mut out = ExperimentOutcome::new(
        "super_individuals",
        n,
        &["replica", "atoms", "records", "records_gap_gt_2", "flagged_super", "anchor_mismatch", "bias_bound"],
    );
    out.reports.push(KsReport::new(
        format!("record jumps with gap > 2 not flagged super ({total} jumps)"),
        CheckKind::Fraction,
        total as usize,
        miss,
        0.05,
        0.0,
    ));
    let mismatched = rows.iter().filter(|r| r[4] > 0.0).count() as f64 / n as f64;
    out.reports.push(KsReport::new("record sets differing between anchors", CheckKind::Fraction, n, mismatched, 0.0, 0.0));
    let alpha = (-s).exp();
    out.meta.push(("horizon".into(), grid[grid.len() - 1]));
    out.meta.push(("s_threshold".into(), s));
    out.meta.push(("epsilon".into(), eps));
    out.meta.push(("atom_rate".into(), eps.powf(-alpha) / gamma(1.0 - alpha)));
    out.meta.push(("bias_bound".into(), rows.first().map_or(0.0, |r| r[5])));
    out.rows = rows.into_iter().enumerate().map(|(i, mut r)| {
        r.insert(0, i as f64);
        r
    }).collect();
    Ok(out)
}
