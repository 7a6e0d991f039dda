//! Branching mechanisms Ψ and their Grey classification.

use std::fmt;
use std::sync::{Arc, OnceLock};

use statrs::function::gamma::gamma;

use crate::error::{domain, invalid, Error, Result};
use crate::expr::Expr;
use crate::quad::{self, TailError};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// E₁(1) = ∫_1^∞ e^{-x}/x dx.
pub const E1_AT_ONE: f64 = 0.219_383_934_395_520_27;

const TRIPLE_REL: f64 = 1e-12;

/// Closed-form families with analytic Ψ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    /// Ψ(u) = u log u
    Neveu,
    /// Ψ(u) = −u^α/(1−α), α ∈ (0, 1)
    StableExplosive { alpha: f64 },
    /// Ψ(u) = α u^{α+1}, α ∈ (0, 1]
    StableSubcritical { alpha: f64 },
    /// Ψ(u) = (u+1) log(u+1)
    LogShift,
    /// Ψ(u) = u² − u
    FellerLogistic,
    /// Ψ(u) = d u − (1 − e^{−u}), i.e. drift d and Lévy measure δ₁
    FiniteVarDelta { d: f64 },
}

/// A Lévy density on (0, ∞).
#[derive(Clone)]
pub enum Density {
    /// c · x^{−p}
    Power { c: f64, p: f64 },
    /// c · e^{−x} · x^{−p}
    ExpPower { c: f64, p: f64 },
    Expr(Expr),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Density {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Density::Power { c, p } => c * x.powf(-p),
            Density::ExpPower { c, p } => c * (-x).exp() * x.powf(-p),
            Density::Expr(e) => e.eval(x),
            Density::Custom(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Density::Power { c, .. } | Density::ExpPower { c, .. } if *c == 0.0)
    }
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Power { c, p } => write!(f, "{c}·x^-{p}"),
            Density::ExpPower { c, p } => write!(f, "{c}·e^-x·x^-{p}"),
            Density::Expr(e) => write!(f, "{}", e.source()),
            Density::Custom(_) => write!(f, "<fn>"),
        }
    }
}

/// Analytic facts supplied with a triple; `None` means unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Hints {
    pub mean_finite: Option<bool>,
    pub variation_finite: Option<bool>,
    pub persistent: Option<bool>,
    pub explosive: Option<bool>,
}

/// Lévy–Khintchine data (σ, γ, π):
/// Ψ(u) = σ²u²/2 + γu + ∫(e^{−ux} − 1 + ux·1{x≤1}) π(x) dx.
#[derive(Debug, Clone)]
pub struct LevyTriple {
    pub sigma: f64,
    pub gamma: f64,
    pub pi: Density,
    pub hints: Hints,
}

fn tail_err(what: &str, e: TailError) -> Error {
    match e {
        TailError::Diverges => Error::NonIntegrableLevyMeasure(what.to_string()),
        TailError::Failure(m) => Error::QuadratureFailure(format!("{what}: {m}")),
    }
}

/// e^{−y} − 1 + y without cancellation.
pub(crate) fn compensated(y: f64) -> f64 {
    if y.abs() < 1e-3 {
        let y2 = y * y;
        y2 * (0.5 - y / 6.0 + y2 / 24.0 - y2 * y / 120.0)
    } else {
        (-y).exp_m1() + y
    }
}

impl LevyTriple {
    pub fn new(sigma: f64, gamma: f64, pi: Density) -> Self {
        LevyTriple { sigma, gamma, pi, hints: Hints::default() }
    }

    pub fn with_hints(mut self, hints: Hints) -> Self {
        self.hints = hints;
        self
    }

    /// ∫_lo^hi g(x) π(x) dx.
    pub fn moment<G: Fn(f64) -> f64>(&self, g: G, lo: f64, hi: f64) -> std::result::Result<f64, TailError> {
        if self.pi.is_zero() {
            return Ok(0.0);
        }
        quad::log_integral(|x| g(x) * self.pi.eval(x), lo, hi, TRIPLE_REL)
    }

    /// π̄(ε) = π((ε, ∞)).
    pub fn tail(&self, eps: f64) -> Result<f64> {
        self.moment(|_| 1.0, eps, f64::INFINITY).map_err(|e| match e {
            TailError::Diverges => Error::InfiniteRate(eps),
            other => tail_err("tail mass", other),
        })
    }

    /// Ψ(base + δ) − Ψ(base) for base ≥ 0 and base + δ > 0; accurate when δ ≪ base.
    pub fn shifted(&self, base: f64, delta: f64) -> Result<f64> {
        let s2 = self.sigma * self.sigma;
        let mut v = 0.5 * s2 * delta * (2.0 * base + delta) + self.gamma * delta;
        if !self.pi.is_zero() {
            let low = self
                .moment(
                    |x| {
                        let dx = delta * x;
                        dx * (-(-base * x).exp_m1()) + (-base * x).exp() * compensated(dx)
                    },
                    0.0,
                    1.0,
                )
                .map_err(|e| tail_err("compensated integral on (0,1]", e))?;
            let high = self
                .moment(|x| (-base * x).exp() * (-delta * x).exp_m1(), 1.0, f64::INFINITY)
                .map_err(|e| tail_err("integral on (1,∞)", e))?;
            v += low + high;
        }
        Ok(v)
    }

    pub fn psi(&self, u: f64) -> Result<f64> {
        self.shifted(0.0, u)
    }
}

/// A branching mechanism.
#[derive(Debug, Clone)]
pub enum Form {
    Closed(Kind),
    Triple(LevyTriple),
}

#[derive(Debug, Clone)]
pub struct Mechanism {
    form: Form,
    class: OnceLock<Classification>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criticality {
    Supercritical,
    Critical,
    Subcritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finiteness {
    Finite,
    Infinite,
}

/// Where a yes/no verdict came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Analytic,
    Hint,
    /// Dyadic block heuristic; not a proof.
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub value: Option<bool>,
    pub source: Source,
}

impl Verdict {
    fn analytic(v: bool) -> Self {
        Verdict { value: Some(v), source: Source::Analytic }
    }

    pub fn require(&self, what: &str) -> Result<bool> {
        self.value.ok_or_else(|| Error::InconclusiveIntegralTest(what.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub criticality: Criticality,
    pub mean: Finiteness,
    pub variation: Finiteness,
    pub persistent: Verdict,
    pub non_explosive: Verdict,
    /// largest root of Ψ, in [0, ∞]
    pub rho: f64,
    /// Ψ'(0+) in [−∞, ∞)
    pub psi_prime_0: f64,
    /// d = lim Ψ(u)/u in (−∞, ∞]
    pub d_coeff: f64,
}

impl Mechanism {
    pub fn closed(kind: Kind) -> Result<Self> {
        match kind {
            Kind::StableExplosive { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                return Err(invalid("alpha", format!("{alpha} not in (0,1)")))
            }
            Kind::StableSubcritical { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                return Err(invalid("alpha", format!("{alpha} not in (0,1]")))
            }
            Kind::FiniteVarDelta { d } if !(d > 0.0 && d.is_finite()) => {
                return Err(invalid("d", format!("{d} must be positive")))
            }
            _ => {}
        }
        Ok(Mechanism { form: Form::Closed(kind), class: OnceLock::new() })
    }

    pub fn neveu() -> Self {
        Self::closed(Kind::Neveu).expect("valid")
    }

    pub fn log_shift() -> Self {
        Self::closed(Kind::LogShift).expect("valid")
    }

    pub fn feller_logistic() -> Self {
        Self::closed(Kind::FellerLogistic).expect("valid")
    }

    pub fn stable_explosive(alpha: f64) -> Result<Self> {
        Self::closed(Kind::StableExplosive { alpha })
    }

    pub fn stable_subcritical(alpha: f64) -> Result<Self> {
        Self::closed(Kind::StableSubcritical { alpha })
    }

    pub fn finite_var_delta(d: f64) -> Result<Self> {
        Self::closed(Kind::FiniteVarDelta { d })
    }

    /// Builds a mechanism from a triple after checking ∫(1∧x²)π < ∞.
    pub fn triple(t: LevyTriple) -> Result<Self> {
        if !(t.sigma >= 0.0 && t.sigma.is_finite()) {
            return Err(invalid("sigma", "must be finite and ≥ 0"));
        }
        if !t.gamma.is_finite() {
            return Err(invalid("gamma", "must be finite"));
        }
        for x in [1e-6, 1e-3, 0.5, 1.0, 2.0, 10.0, 1e3] {
            let p = t.pi.eval(x);
            if !(p >= 0.0) {
                return Err(invalid("pi", format!("density is negative or undefined at r={x}")));
            }
        }
        let small = t.moment(|x| x * x, 0.0, 1.0);
        let large = t.moment(|_| 1.0, 1.0, f64::INFINITY);
        match (small, large) {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => {}
            (Err(TailError::Failure(m)), _) | (_, Err(TailError::Failure(m))) => {
                return Err(Error::NonIntegrableLevyMeasure(m))
            }
            _ => return Err(Error::NonIntegrableLevyMeasure("∫(1∧x²)π(dx) diverges".into())),
        }
        Ok(Mechanism { form: Form::Triple(t), class: OnceLock::new() })
    }

    pub fn form(&self) -> &Form {
        &self.form
    }

    pub fn kind(&self) -> Option<Kind> {
        match &self.form {
            Form::Closed(k) => Some(*k),
            Form::Triple(_) => None,
        }
    }

    /// Lévy–Khintchine data of a closed form, when π has a density.
    pub fn levy_triple(&self) -> Option<LevyTriple> {
        match &self.form {
            Form::Triple(t) => Some(t.clone()),
            Form::Closed(k) => match *k {
                Kind::Neveu => Some(LevyTriple::new(0.0, 1.0 - EULER_GAMMA, Density::Power { c: 1.0, p: 2.0 })),
                Kind::LogShift => {
                    Some(LevyTriple::new(0.0, 1.0 + E1_AT_ONE, Density::ExpPower { c: 1.0, p: 2.0 }))
                }
                Kind::FellerLogistic => {
                    Some(LevyTriple::new(2f64.sqrt(), -1.0, Density::Power { c: 0.0, p: 0.0 }))
                }
                Kind::StableSubcritical { alpha } if alpha == 1.0 => {
                    Some(LevyTriple::new(2f64.sqrt(), 0.0, Density::Power { c: 0.0, p: 0.0 }))
                }
                Kind::StableSubcritical { alpha } => {
                    let c = alpha * alpha * (1.0 + alpha) / gamma(1.0 - alpha);
                    Some(LevyTriple::new(0.0, c / alpha, Density::Power { c, p: 2.0 + alpha }))
                }
                Kind::StableExplosive { alpha } => {
                    let k = alpha / ((1.0 - alpha) * gamma(1.0 - alpha));
                    Some(LevyTriple::new(0.0, -k / (1.0 - alpha), Density::Power { c: k, p: 1.0 + alpha }))
                }
                Kind::FiniteVarDelta { .. } => None,
            },
        }
    }

    /// Ψ(u) for u > 0.
    pub fn psi(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(domain(format!("Ψ needs u > 0, got {u}")));
        }
        match &self.form {
            Form::Closed(k) => Ok(closed_psi(*k, u)),
            Form::Triple(t) => t.psi(u),
        }
    }

    /// Ψ(u)/u given ln u; stays finite for |ln u| far beyond the f64 range of u.
    pub fn psi_ratio(&self, ln_u: f64) -> f64 {
        match &self.form {
            Form::Closed(k) => closed_ratio(*k, ln_u),
            Form::Triple(t) => {
                if ln_u < -700.0 {
                    let p0 = self.classify().psi_prime_0;
                    if p0.is_finite() {
                        return p0;
                    }
                }
                let lu = ln_u.clamp(-700.0, 700.0);
                let u = lu.exp();
                t.psi(u).map(|v| v / u).unwrap_or(f64::NAN)
            }
        }
    }

    /// Ψ(ρ + δ), accurate for small |δ|; ρ is the largest root.
    pub fn psi_near_rho(&self, delta: f64) -> f64 {
        let rho = self.classify().rho;
        if !rho.is_finite() || rho == 0.0 {
            return self.psi(delta).unwrap_or(f64::NAN);
        }
        match &self.form {
            Form::Closed(Kind::Neveu) => (1.0 + delta) * delta.ln_1p(),
            Form::Closed(Kind::FellerLogistic) => delta * (1.0 + delta),
            Form::Closed(Kind::FiniteVarDelta { d }) => d * delta + (-rho).exp() * (-delta).exp_m1(),
            Form::Closed(k) => closed_psi(*k, rho + delta),
            Form::Triple(t) => t.shifted(rho, delta).unwrap_or(f64::NAN),
        }
    }

    pub fn classify(&self) -> Classification {
        *self.class.get_or_init(|| match &self.form {
            Form::Closed(k) => closed_class(*k),
            Form::Triple(t) => triple_class(t),
        })
    }
}

fn closed_psi(k: Kind, u: f64) -> f64 {
    match k {
        Kind::Neveu => u * u.ln(),
        Kind::StableExplosive { alpha } => -u.powf(alpha) / (1.0 - alpha),
        Kind::StableSubcritical { alpha } => alpha * u.powf(alpha + 1.0),
        Kind::LogShift => (u + 1.0) * u.ln_1p(),
        Kind::FellerLogistic => u * (u - 1.0),
        Kind::FiniteVarDelta { d } => d * u + (-u).exp_m1(),
    }
}

fn closed_ratio(k: Kind, ln_u: f64) -> f64 {
    match k {
        Kind::Neveu => ln_u,
        Kind::StableExplosive { alpha } => -((alpha - 1.0) * ln_u).exp() / (1.0 - alpha),
        Kind::StableSubcritical { alpha } => alpha * (alpha * ln_u).exp(),
        Kind::LogShift => {
            if ln_u > 30.0 {
                let r = (-ln_u).exp();
                (1.0 + r) * (ln_u + r.ln_1p())
            } else {
                let u = ln_u.exp();
                if u == 0.0 {
                    1.0
                } else {
                    (1.0 + u) * u.ln_1p() / u
                }
            }
        }
        Kind::FellerLogistic => ln_u.exp() - 1.0,
        Kind::FiniteVarDelta { d } => {
            let u = ln_u.exp();
            if u == 0.0 {
                d - 1.0
            } else {
                d + (-u).exp_m1() / u
            }
        }
    }
}

fn finite_var_delta_rho(d: f64) -> f64 {
    if d >= 1.0 {
        return 0.0;
    }
    let f = |r: f64| d * r + (-r).exp_m1();
    quad::bisect(f, 1e-3 * (1.0 - d), 1.0 / d, 1e-15).expect("sign change bracketed")
}

fn closed_class(k: Kind) -> Classification {
    use Criticality::*;
    use Finiteness::*;
    let yes = Verdict::analytic(true);
    let no = Verdict::analytic(false);
    match k {
        Kind::Neveu => Classification {
            criticality: Supercritical,
            mean: Infinite,
            variation: Infinite,
            persistent: yes,
            non_explosive: yes,
            rho: 1.0,
            psi_prime_0: f64::NEG_INFINITY,
            d_coeff: f64::INFINITY,
        },
        Kind::StableExplosive { .. } => Classification {
            criticality: Supercritical,
            mean: Infinite,
            variation: Finite,
            persistent: yes,
            non_explosive: no,
            rho: f64::INFINITY,
            psi_prime_0: f64::NEG_INFINITY,
            d_coeff: 0.0,
        },
        Kind::StableSubcritical { .. } => Classification {
            criticality: Critical,
            mean: Finite,
            variation: Infinite,
            persistent: no,
            non_explosive: yes,
            rho: 0.0,
            psi_prime_0: 0.0,
            d_coeff: f64::INFINITY,
        },
        Kind::LogShift => Classification {
            criticality: Subcritical,
            mean: Finite,
            variation: Infinite,
            persistent: yes,
            non_explosive: yes,
            rho: 0.0,
            psi_prime_0: 1.0,
            d_coeff: f64::INFINITY,
        },
        Kind::FellerLogistic => Classification {
            criticality: Supercritical,
            mean: Finite,
            variation: Infinite,
            persistent: no,
            non_explosive: yes,
            rho: 1.0,
            psi_prime_0: -1.0,
            d_coeff: f64::INFINITY,
        },
        Kind::FiniteVarDelta { d } => Classification {
            criticality: if d > 1.0 {
                Subcritical
            } else if d == 1.0 {
                Critical
            } else {
                Supercritical
            },
            mean: Finite,
            variation: Finite,
            persistent: yes,
            non_explosive: yes,
            rho: finite_var_delta_rho(d),
            psi_prime_0: d - 1.0,
            d_coeff: d,
        },
    }
}

/// Dyadic-block divergence test for ∫ g: blocks `[a·2^k, a·2^{k+1}]`
/// (`upward`) or `[a·2^{−k−1}, a·2^{−k}]`, k ≤ 60. `Some(true)` means
/// divergent, `None` undecided.
pub fn dyadic_divergence<G: Fn(f64) -> f64>(g: G, a: f64, upward: bool) -> Option<bool> {
    const BLOCKS: i32 = 61;
    const WINDOW: usize = 10;
    const RATIO: f64 = 0.95;
    let mut sums = Vec::with_capacity(BLOCKS as usize);
    for k in 0..BLOCKS {
        let (lo, hi) = if upward {
            (a * 2f64.powi(k), a * 2f64.powi(k + 1))
        } else {
            (a * 2f64.powi(-k - 1), a * 2f64.powi(-k))
        };
        let b = quad::integrate(&g, lo, hi, 1e-8, 0.0).ok()?;
        if !b.is_finite() || b < 0.0 {
            return None;
        }
        sums.push(b);
    }
    let ratios: Vec<f64> = sums.windows(2).map(|w| w[1] / w[0]).collect();
    let last = &ratios[ratios.len() - WINDOW..];
    if last.iter().all(|r| *r > RATIO) {
        Some(true)
    } else if last.iter().all(|r| *r <= RATIO) {
        Some(false)
    } else {
        None
    }
}

fn triple_class(t: &LevyTriple) -> Classification {
    let big_mean = t.moment(|x| x, 1.0, f64::INFINITY);
    let psi_prime_0 = match (big_mean, t.hints.mean_finite) {
        (_, Some(false)) => f64::NEG_INFINITY,
        (Ok(m), _) if m.is_finite() => t.gamma - m,
        _ => f64::NEG_INFINITY,
    };
    let small_var = t.moment(|x| x, 0.0, 1.0);
    let d_coeff = if t.sigma > 0.0 || t.hints.variation_finite == Some(false) {
        f64::INFINITY
    } else {
        match small_var {
            Ok(m) if m.is_finite() => t.gamma + m,
            _ => f64::INFINITY,
        }
    };
    let p0_scale = 1e-10 * (1.0 + t.gamma.abs());
    let criticality = if psi_prime_0 < -p0_scale {
        Criticality::Supercritical
    } else if psi_prime_0 > p0_scale {
        Criticality::Subcritical
    } else {
        Criticality::Critical
    };
    let psi = |u: f64| t.psi(u).unwrap_or(f64::NAN);
    let rho = if criticality != Criticality::Supercritical {
        0.0
    } else if d_coeff <= 0.0 {
        f64::INFINITY
    } else {
        // sign scan on a log grid, then bisection
        let mut prev = 1e-12;
        let mut found = f64::INFINITY;
        for k in 1..=120 {
            let u = 1e-12 * 10f64.powf(k as f64 / 5.0);
            if psi(u) >= 0.0 {
                found = quad::bisect(psi, prev, u, 1e-12).unwrap_or(u);
                break;
            }
            prev = u;
        }
        found
    };
    let inv_abs = |u: f64| 1.0 / psi(u).abs();
    let persistent = if let Some(p) = t.hints.persistent {
        Verdict { value: Some(p), source: Source::Hint }
    } else if d_coeff.is_finite() || rho.is_infinite() {
        Verdict::analytic(true)
    } else {
        let start = if rho > 0.0 { (2.0 * rho).max(1.0) } else { 1.0 };
        Verdict { value: dyadic_divergence(inv_abs, start, true), source: Source::Numeric }
    };
    let non_explosive = if let Some(e) = t.hints.explosive {
        Verdict { value: Some(!e), source: Source::Hint }
    } else if psi_prime_0.is_finite() {
        Verdict::analytic(true)
    } else {
        let start = if rho.is_finite() { (0.5 * rho).min(1.0) } else { 1.0 };
        Verdict { value: dyadic_divergence(inv_abs, start, false), source: Source::Numeric }
    };
    Classification {
        criticality,
        mean: if psi_prime_0.is_finite() { Finiteness::Finite } else { Finiteness::Infinite },
        variation: if d_coeff.is_finite() { Finiteness::Finite } else { Finiteness::Infinite },
        persistent,
        non_explosive,
        rho,
        psi_prime_0,
        d_coeff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_values() {
        let n = Mechanism::neveu();
        assert_eq!(n.psi(1.0).unwrap(), 0.0);
        assert_relative_eq!(n.psi(std::f64::consts::E).unwrap(), std::f64::consts::E);
        assert!(n.psi(0.0).is_err());
        assert!(Mechanism::stable_explosive(1.5).is_err());
    }

    #[test]
    fn compensated_series_matches() {
        for y in [1e-6, 5e-4, 1e-3, 0.3, 5.0] {
            let direct = (-y as f64).exp() - 1.0 + y;
            assert_relative_eq!(compensated(y), direct, max_relative = 1e-6);
        }
    }

    #[test]
    fn neveu_triple_reproduces_closed_form() {
        let t = Mechanism::neveu().levy_triple().unwrap();
        assert_relative_eq!(t.psi(2.0).unwrap(), 2.0 * 2f64.ln(), max_relative = 1e-10);
    }

    #[test]
    fn near_rho_matches_direct() {
        let m = Mechanism::feller_logistic();
        assert_relative_eq!(m.psi_near_rho(0.25), m.psi(1.25).unwrap(), max_relative = 1e-14);
        let f = Mechanism::finite_var_delta(0.5).unwrap();
        let rho = f.classify().rho;
        assert_relative_eq!(f.psi_near_rho(0.1), f.psi(rho + 0.1).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn finite_var_delta_root() {
        let f = Mechanism::finite_var_delta(0.5).unwrap();
        let rho = f.classify().rho;
        assert!(f.psi(rho).unwrap().abs() < 1e-14);
        assert_eq!(Mechanism::finite_var_delta(2.0).unwrap().classify().rho, 0.0);
    }
}
