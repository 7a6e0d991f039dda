//! Solutions of the cumulant equation ∫_{v_t(λ)}^{λ} dz/Ψ(z) = t.
//!
//! The numeric path never integrates in `z` directly. Each sign component
//! of Ψ gets its own coordinate, in which `dz/|Ψ(z)|` is smooth and bounded:
//!
//! * `(ρ, ∞)` — `z = ρ + e^s` (so `1/Ψ ~ 1/(Ψ'(ρ)(z−ρ))` becomes constant);
//! * `(0, ρ)` — `z = ρ·logistic(c)`;
//! * `(0, ∞)` when ρ = ∞ — `z = e^s`.
//!
//! Values are carried as `ln z`, so v_{−t}(λ) may be far outside the f64
//! range of `z` itself.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{domain, Error, Result};
use crate::mechanism::{Classification, Kind, Mechanism};
use crate::quad::{self, TailError};

const CACHE_CAP: usize = 1 << 16;
const COORD_LIMIT: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Comp {
    /// (ρ, ∞), Ψ > 0
    Upper,
    /// (0, ρ) with 0 < ρ < ∞, Ψ < 0
    Lower,
    /// (0, ∞) with ρ = ∞, Ψ < 0
    Whole,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// ln(e^a − 1) for a > 0.
fn ln_expm1(a: f64) -> f64 {
    if a > 30.0 {
        a + (-(-a).exp()).ln_1p()
    } else {
        a.exp_m1().ln()
    }
}

/// Result of comparing the quadrature solver with the ODE integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCheck {
    pub primary: f64,
    pub ode: f64,
    pub rel_diff: f64,
    /// false when the two disagree beyond 1e−6 relative
    pub agrees: bool,
}

#[derive(Debug)]
pub struct CumulantSolver {
    mech: Mechanism,
    class: Classification,
    pub quad_rel_tol: f64,
    pub root_rel_tol: f64,
    closed: bool,
    cache: Mutex<HashMap<(u8, u64, u64), f64>>,
}

impl Clone for CumulantSolver {
    fn clone(&self) -> Self {
        CumulantSolver {
            mech: self.mech.clone(),
            class: self.class,
            quad_rel_tol: self.quad_rel_tol,
            root_rel_tol: self.root_rel_tol,
            closed: self.closed,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl CumulantSolver {
    /// Solver that uses closed forms where the family has one.
    pub fn new(mech: Mechanism) -> Self {
        let class = mech.classify();
        CumulantSolver {
            mech,
            class,
            quad_rel_tol: 1e-12,
            root_rel_tol: 1e-12,
            closed: true,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Solver forced onto the quadrature path, even for closed forms.
    pub fn numeric(mech: Mechanism) -> Self {
        CumulantSolver { closed: false, ..Self::new(mech) }
    }

    pub fn mechanism(&self) -> &Mechanism {
        &self.mech
    }

    pub fn classification(&self) -> &Classification {
        &self.class
    }

    pub fn uses_closed_form(&self) -> bool {
        self.closed && self.closed_kind().is_some()
    }

    fn closed_kind(&self) -> Option<Kind> {
        match self.mech.kind() {
            Some(Kind::FiniteVarDelta { .. }) | None => None,
            k => k,
        }
    }

    // ---- public API -------------------------------------------------------

    pub fn v_forward(&self, t: f64, lambda: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain(format!("v_t needs t ≥ 0, got {t}")));
        }
        Ok(self.ln_v(t, lambda)?.exp())
    }

    pub fn v_inverse(&self, t: f64, lambda: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain(format!("v_{{-t}} needs t ≥ 0, got {t}")));
        }
        Ok(self.ln_v(-t, lambda)?.exp())
    }

    /// ln v_t(λ) for signed `t`: `t < 0` gives the inverse v_{−|t|}(λ).
    pub fn ln_v(&self, t: f64, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(domain(format!("λ must be positive and finite, got {lambda}")));
        }
        if t.is_nan() {
            return Err(domain("t is NaN"));
        }
        if t == 0.0 || lambda == self.class.rho {
            return Ok(lambda.ln());
        }
        if self.uses_closed_form() {
            return self.closed_ln_v(t, lambda);
        }
        let key = (0u8, t.to_bits(), lambda.to_bits());
        if let Some(v) = self.cached(key) {
            return Ok(v);
        }
        let v = self.numeric_ln_v(t, lambda)?;
        self.store(key, v);
        Ok(v)
    }

    /// v̄_t; +∞ for persistent mechanisms.
    pub fn vbar(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(domain(format!("v̄_t needs t > 0, got {t}")));
        }
        if self.class.persistent.require("persistence")? {
            return Ok(f64::INFINITY);
        }
        if self.closed {
            match self.closed_kind() {
                Some(Kind::FellerLogistic) => return Ok(1.0 / -(-t).exp_m1()),
                Some(Kind::StableSubcritical { alpha }) => return Ok((alpha * alpha * t).powf(-1.0 / alpha)),
                _ => {}
            }
        }
        let key = (1u8, t.to_bits(), 0);
        if let Some(v) = self.cached(key) {
            return Ok(v.exp());
        }
        let v = self.numeric_ln_vbar(t)?;
        self.store(key, v);
        Ok(v.exp())
    }

    /// v̲_t; 0 for non-explosive mechanisms.
    pub fn vunder(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(domain(format!("v̲_t needs t > 0, got {t}")));
        }
        if self.class.non_explosive.require("explosion")? {
            return Ok(0.0);
        }
        if self.closed {
            if let Some(Kind::StableExplosive { alpha }) = self.closed_kind() {
                return Ok(t.powf(1.0 / (1.0 - alpha)));
            }
        }
        let key = (2u8, t.to_bits(), 0);
        if let Some(v) = self.cached(key) {
            return Ok(v.exp());
        }
        let v = self.numeric_ln_vunder(t)?;
        self.store(key, v);
        Ok(v.exp())
    }

    /// ∫_a^b du/Ψ(u) for `a`, `b` given by their logarithms and lying in
    /// the same sign component of Ψ.
    pub fn inv_psi_integral_ln(&self, ln_a: f64, ln_b: f64) -> Result<f64> {
        let rho = self.class.rho;
        let comp_of = |ln_z: f64| -> Result<Comp> {
            if rho == 0.0 || (rho.is_finite() && ln_z > rho.ln()) {
                Ok(Comp::Upper)
            } else if rho.is_infinite() {
                Ok(Comp::Whole)
            } else if ln_z < rho.ln() {
                Ok(Comp::Lower)
            } else {
                Err(domain("integration endpoint at ρ"))
            }
        };
        let ca = comp_of(ln_a)?;
        if comp_of(ln_b)? != ca {
            return Err(domain("endpoints straddle ρ"));
        }
        let sa = self.to_coord(ca, ln_a);
        let sb = self.to_coord(ca, ln_b);
        let v = quad::integrate(|s| self.h(ca, s), sa.min(sb), sa.max(sb), self.quad_rel_tol, 0.0)?;
        let oriented = if sb >= sa { v } else { -v };
        Ok(if ca == Comp::Upper { oriented } else { -oriented })
    }

    pub fn inv_psi_integral(&self, a: f64, b: f64) -> Result<f64> {
        if !(a > 0.0 && b > 0.0) {
            return Err(domain("endpoints must be positive"));
        }
        self.inv_psi_integral_ln(a.ln(), b.ln())
    }

    /// ln v_t(λ) from the ODE d(ln v)/dt = −Ψ(v)/v (oracle path).
    pub fn ode_ln_v(&self, t: f64, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(domain("λ must be positive"));
        }
        quad::rk45(|_, w| -self.mech.psi_ratio(w), 0.0, lambda.ln(), t, 1e-12, 1e-13)
    }

    /// Compares v_t(λ) (signed t) from the primary path with the ODE oracle.
    pub fn cross_check(&self, t: f64, lambda: f64) -> Result<CrossCheck> {
        let primary = self.ln_v(t, lambda)?.exp();
        let ode = self.ode_ln_v(t, lambda)?.exp();
        let rel_diff = (primary - ode).abs() / primary.abs().max(f64::MIN_POSITIVE);
        Ok(CrossCheck { primary, ode, rel_diff, agrees: rel_diff <= 1e-6 })
    }

    // ---- closed forms -----------------------------------------------------

    fn closed_ln_v(&self, t: f64, lambda: f64) -> Result<f64> {
        let beyond = |what: &str| domain(format!("λ={lambda} outside the domain of v_{t}: {what}"));
        match self.closed_kind().expect("closed kind") {
            Kind::Neveu => Ok((-t).exp() * lambda.ln()),
            Kind::LogShift => Ok(ln_expm1((-t).exp() * lambda.ln_1p())),
            Kind::FellerLogistic => {
                let den = (-t).exp() - lambda * (-t).exp_m1();
                if den <= 0.0 {
                    return Err(beyond("λ ≥ v̄_t"));
                }
                Ok(lambda.ln() - den.ln())
            }
            Kind::StableExplosive { alpha } => {
                let b = 1.0 - alpha;
                let base = lambda.powf(b) + t;
                if base <= 0.0 {
                    return Err(beyond("λ ≤ v̲_t"));
                }
                Ok(base.ln() / b)
            }
            Kind::StableSubcritical { alpha } => {
                let base = lambda.powf(-alpha) + alpha * alpha * t;
                if base <= 0.0 {
                    return Err(beyond("λ ≥ v̄_t"));
                }
                Ok(-base.ln() / alpha)
            }
            Kind::FiniteVarDelta { .. } => unreachable!("no closed form"),
        }
    }

    // ---- coordinates ------------------------------------------------------

    fn comp_of_lambda(&self, lambda: f64) -> Comp {
        let rho = self.class.rho;
        if rho.is_infinite() {
            Comp::Whole
        } else if lambda > rho {
            Comp::Upper
        } else {
            Comp::Lower
        }
    }

    fn to_coord(&self, comp: Comp, ln_z: f64) -> f64 {
        let rho = self.class.rho;
        match comp {
            Comp::Whole => ln_z,
            Comp::Upper if rho == 0.0 => ln_z,
            Comp::Upper => {
                let d = ln_z - rho.ln();
                if d > 700.0 {
                    ln_z + (-(-d).exp()).ln_1p()
                } else {
                    rho.ln() + d.exp_m1().ln()
                }
            }
            Comp::Lower => {
                let d = ln_z - rho.ln();
                d - (-d.exp_m1()).ln()
            }
        }
    }

    fn coord_inverse(&self, comp: Comp, s: f64) -> f64 {
        let rho = self.class.rho;
        match comp {
            Comp::Whole => s,
            Comp::Upper if rho == 0.0 => s,
            Comp::Upper => {
                let lr = rho.ln();
                if s > lr {
                    s + (lr - s).exp().ln_1p()
                } else {
                    lr + (s - lr).exp().ln_1p()
                }
            }
            Comp::Lower => rho.ln() - softplus(-s),
        }
    }

    /// |dz/ds| / |Ψ(z)| in the component coordinate.
    fn h(&self, comp: Comp, s: f64) -> f64 {
        let rho = self.class.rho;
        let m = &self.mech;
        match comp {
            Comp::Whole => 1.0 / m.psi_ratio(s).abs(),
            Comp::Upper if rho == 0.0 => 1.0 / m.psi_ratio(s),
            Comp::Upper => {
                if s < rho.ln() {
                    let delta = s.exp();
                    delta / m.psi_near_rho(delta)
                } else {
                    let ln_z = self.coord_inverse(comp, s);
                    let frac = 1.0 / (1.0 + rho * (-s).exp());
                    frac / m.psi_ratio(ln_z)
                }
            }
            Comp::Lower => {
                if s < 0.0 {
                    let ln_z = self.coord_inverse(comp, s);
                    let one_minus = 1.0 / (1.0 + s.exp());
                    one_minus / m.psi_ratio(ln_z).abs()
                } else {
                    let q = 1.0 / (1.0 + s.exp()); // 1 − logistic(s)
                    let delta = -rho * q;
                    let p = 1.0 - q;
                    p * delta.abs() / m.psi_near_rho(delta).abs()
                }
            }
        }
    }

    /// Finds `s` with `∫ h` from `s0` to `s` (moving in `dir`) equal to `tau`.
    fn travel(&self, comp: Comp, s0: f64, tau: f64, dir: f64) -> Result<f64> {
        let h = |s: f64| self.h(comp, s);
        let rel = self.quad_rel_tol;
        let mut acc = 0.0;
        let mut s = s0;
        let mut step: f64 = 0.5;
        for _ in 0..100_000 {
            let hs = h(s);
            if !(hs > 0.0) || !hs.is_finite() {
                return Err(Error::QuadratureFailure(format!("integrand {hs} at coordinate {s}")));
            }
            let guess = 1.2 * (tau - acc) / hs;
            let cap = (4.0 * step).max(0.5 * s.abs()).max(1.0);
            step = guess.clamp(1e-9 * s.abs().max(1.0), cap);
            let next = s + dir * step;
            if next.abs() > COORD_LIMIT {
                return Err(Error::NoSolution(format!("solution beyond representable range (coordinate {next:e})")));
            }
            let (a, b) = if dir > 0.0 { (s, next) } else { (next, s) };
            let piece = quad::integrate(h, a, b, rel, 1e-15 * tau)?;
            if acc + piece < tau {
                acc += piece;
                s = next;
                continue;
            }
            let start = s;
            let base = acc;
            let residual = |x: f64| -> Result<(f64, f64)> {
                let (a, b) = if x >= start { (start, x) } else { (x, start) };
                let seg = quad::integrate(h, a, b, rel, 1e-15 * tau)?;
                Ok((base + seg - tau, dir * h(x)))
            };
            let (lo, hi) = if dir > 0.0 { (start, next) } else { (next, start) };
            let tol = self.root_rel_tol * 0.1 * lo.abs().max(hi.abs()).max(1.0);
            return quad::newton_bracketed(residual, lo, hi, tol);
        }
        Err(Error::NonConvergent("coordinate march did not reach its target".into()))
    }

    fn numeric_ln_v(&self, t: f64, lambda: f64) -> Result<f64> {
        let comp = self.comp_of_lambda(lambda);
        let forward_dir = if comp == Comp::Upper { -1.0 } else { 1.0 };
        if t < 0.0 {
            // inverse: check the domain boundaries first
            match comp {
                Comp::Upper if self.class.persistent.value == Some(false) => {
                    let vbar = self.vbar(-t)?;
                    if lambda >= vbar {
                        return Err(domain(format!("λ={lambda} ≥ v̄_{}={vbar}", -t)));
                    }
                }
                Comp::Lower | Comp::Whole if self.class.non_explosive.value == Some(false) => {
                    let vunder = self.vunder(-t)?;
                    if lambda <= vunder {
                        return Err(domain(format!("λ={lambda} ≤ v̲_{}={vunder}", -t)));
                    }
                }
                _ => {}
            }
        }
        let s0 = self.to_coord(comp, lambda.ln());
        let dir = if t > 0.0 { forward_dir } else { -forward_dir };
        let s = self.travel(comp, s0, t.abs(), dir)?;
        Ok(self.coord_inverse(comp, s))
    }

    fn tail_err(e: TailError) -> Error {
        match e {
            TailError::Diverges => Error::QuadratureFailure("boundary integral diverges".into()),
            TailError::Failure(m) => Error::QuadratureFailure(m),
        }
    }

    fn numeric_ln_vbar(&self, t: f64) -> Result<f64> {
        let comp = Comp::Upper;
        let h = |s: f64| self.h(comp, s);
        let s_ref = 0.0;
        let tail = quad::integrate_half_line(h, s_ref, 1.0, self.quad_rel_tol, 1e6).map_err(Self::tail_err)?;
        let s = if t >= tail {
            self.travel(comp, s_ref, t - tail, -1.0)?
        } else {
            self.travel(comp, s_ref, tail - t, 1.0)?
        };
        Ok(self.coord_inverse(comp, s))
    }

    fn numeric_ln_vunder(&self, t: f64) -> Result<f64> {
        let comp = if self.class.rho.is_infinite() { Comp::Whole } else { Comp::Lower };
        let h = |s: f64| self.h(comp, s);
        let s_ref = 0.0;
        let head = quad::integrate_half_line(h, s_ref, -1.0, self.quad_rel_tol, 1e6).map_err(Self::tail_err)?;
        let s = if t >= head {
            self.travel(comp, s_ref, t - head, 1.0)?
        } else {
            self.travel(comp, s_ref, head - t, -1.0)?
        };
        Ok(self.coord_inverse(comp, s))
    }

    // ---- memo -------------------------------------------------------------

    fn cached(&self, key: (u8, u64, u64)) -> Option<f64> {
        self.cache.lock().ok()?.get(&key).copied()
    }

    fn store(&self, key: (u8, u64, u64), v: f64) {
        if let Ok(mut c) = self.cache.lock() {
            if c.len() >= CACHE_CAP {
                c.clear();
            }
            c.insert(key, v);
        }
    }
}
