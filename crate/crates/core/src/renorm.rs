//! The non-linear renormalizer G, its inverse and the limit law F = e^{−G⁻¹}.
//!
//! Supercritical (ρ < ∞): G(y) = exp(−∫_y^{λ₀} du/Ψ) on (0, ρ).
//! Subcritical / critical: G(y) = exp(−∫_{λ₀}^y du/Ψ) on (0, ∞).
//! Everything is computed as ln G from ln y.

use std::sync::Arc;

use crate::cumulant::CumulantSolver;
use crate::error::{domain, Error, Result};
use crate::mechanism::{Criticality, Kind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Supercritical,
    Subcritical,
}

#[derive(Debug, Clone)]
pub struct Renormalizer {
    solver: Arc<CumulantSolver>,
    regime: Regime,
    lambda0: f64,
    rho: f64,
}

impl Renormalizer {
    /// Renormalizer with the default anchor: 1/e for Neveu, e − 1 for
    /// LogShift, ρ/2 (supercritical) or 1 (subcritical) otherwise.
    pub fn new(solver: Arc<CumulantSolver>) -> Result<Self> {
        let c = solver.classification();
        let lambda0 = match solver.mechanism().kind() {
            Some(Kind::Neveu) => (-1f64).exp(),
            Some(Kind::LogShift) => std::f64::consts::E - 1.0,
            _ if c.criticality == Criticality::Supercritical => 0.5 * c.rho,
            _ => 1.0,
        };
        Self::with_anchor(solver, lambda0)
    }

    pub fn with_anchor(solver: Arc<CumulantSolver>, lambda0: f64) -> Result<Self> {
        let c = *solver.classification();
        let regime = if c.criticality == Criticality::Supercritical {
            if !c.rho.is_finite() {
                return Err(Error::UnsupportedMechanism("renormalizer (ρ = ∞, use explosion times)"));
            }
            if !(lambda0 > 0.0 && lambda0 < c.rho) {
                return Err(domain(format!("anchor λ₀={lambda0} must lie in (0, ρ={})", c.rho)));
            }
            Regime::Supercritical
        } else {
            if !(lambda0 > 0.0 && lambda0.is_finite()) {
                return Err(domain(format!("anchor λ₀={lambda0} must be positive")));
            }
            Regime::Subcritical
        };
        Ok(Renormalizer { solver, regime, lambda0, rho: c.rho })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn solver(&self) -> &CumulantSolver {
        &self.solver
    }

    /// ln G(y) given ln y; −∞ at y = ρ in the supercritical regime.
    pub fn ln_g(&self, ln_y: f64) -> Result<f64> {
        if ln_y.is_nan() {
            return Err(domain("ln y is NaN"));
        }
        if self.regime == Regime::Supercritical && ln_y >= self.rho.ln() {
            if ln_y == self.rho.ln() {
                return Ok(f64::NEG_INFINITY);
            }
            return Err(domain(format!("y = e^{ln_y} beyond ρ = {}", self.rho)));
        }
        let l0 = self.lambda0;
        if self.solver.uses_closed_form() {
            match self.solver.mechanism().kind() {
                Some(Kind::Neveu) => return Ok((-ln_y).ln() - (-l0.ln()).ln()),
                Some(Kind::LogShift) => {
                    let ln1p_y = ln_y.max(0.0) + (-ln_y.abs()).exp().ln_1p();
                    return Ok(l0.ln_1p().ln() - ln1p_y.ln());
                }
                Some(Kind::FellerLogistic) => {
                    return Ok((-ln_y.exp()).ln_1p() - ln_y + l0.ln() - (-l0).ln_1p());
                }
                Some(Kind::StableSubcritical { alpha }) => {
                    return Ok(((-alpha * ln_y).exp() - l0.powf(-alpha)) / (alpha * alpha));
                }
                _ => {}
            }
        }
        let ln_l0 = l0.ln();
        let integral = match self.regime {
            Regime::Supercritical => self.solver.inv_psi_integral_ln(ln_y, ln_l0)?,
            Regime::Subcritical => self.solver.inv_psi_integral_ln(ln_l0, ln_y)?,
        };
        Ok(-integral)
    }

    pub fn g_eval(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(domain(format!("G needs y > 0, got {y}")));
        }
        if self.regime == Regime::Supercritical && !(y <= self.rho) {
            return Err(domain(format!("G needs y ≤ ρ = {}, got {y}", self.rho)));
        }
        Ok(self.ln_g(y.ln())?.exp())
    }

    /// ln G⁻¹(z).
    pub fn ln_g_inverse(&self, z: f64) -> Result<f64> {
        if z.is_nan() || z < 0.0 {
            return Err(domain(format!("G⁻¹ needs z ≥ 0, got {z}")));
        }
        if z == 0.0 {
            return Ok(match self.regime {
                Regime::Supercritical => self.rho.ln(),
                Regime::Subcritical => f64::INFINITY,
            });
        }
        if z.is_infinite() {
            return Ok(f64::NEG_INFINITY);
        }
        let t = match self.regime {
            Regime::Supercritical => -z.ln(),
            Regime::Subcritical => z.ln(),
        };
        self.solver.ln_v(t, self.lambda0)
    }

    pub fn g_inverse(&self, z: f64) -> Result<f64> {
        Ok(self.ln_g_inverse(z)?.exp())
    }

    /// F(z) = exp(−G⁻¹(z)); zero below the support.
    pub fn limit_cdf(&self, z: f64) -> f64 {
        if !(z >= 0.0) {
            return 0.0;
        }
        if z == f64::INFINITY {
            return 1.0;
        }
        match self.ln_g_inverse(z) {
            Ok(l) => (-l.exp()).exp(),
            Err(_) => f64::NAN,
        }
    }

    /// ln of e^{∓t} G(1/X ∧ ρ) from ln X; −∞ for the zero statistic.
    pub fn ln_statistic(&self, t: f64, log_x: f64) -> f64 {
        if log_x == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        if log_x == f64::INFINITY {
            return f64::INFINITY;
        }
        let ln_y = -log_x;
        match self.regime {
            Regime::Supercritical => {
                if ln_y >= self.rho.ln() {
                    return f64::NEG_INFINITY;
                }
                self.ln_g(ln_y).map(|g| g - t).unwrap_or(f64::NAN)
            }
            Regime::Subcritical => self.ln_g(ln_y).map(|g| g + t).unwrap_or(f64::NAN),
        }
    }

    /// e^{−t}G(1/X ∧ ρ) (supercritical) or e^{t}G(1/X) (subcritical).
    pub fn renormalized_statistic(&self, t: f64, log_x: f64) -> f64 {
        self.ln_statistic(t, log_x).exp()
    }

    /// k_λ = lim G(1/y)/(log y)^{±1/α}, read off a dyadic grid of log-scales
    /// and Richardson-extrapolated.
    pub fn power_asymptote(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0) {
            return Err(domain("α must be positive"));
        }
        let mut ks = Vec::with_capacity(7);
        for k in 0..7 {
            let l = 10.0 * 2f64.powi(k);
            let v = match self.regime {
                Regime::Supercritical => (self.ln_g(-l)? - l.ln() / alpha).exp(),
                Regime::Subcritical => (self.ln_g(l)? + l.ln() / alpha).exp(),
            };
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::NonConvergent(format!("k(L) = {v} at L = {l}")));
            }
            ks.push(v);
        }
        let n = ks.len();
        let rich: Vec<f64> = ks.windows(2).map(|w| 2.0 * w[1] - w[0]).collect();
        let (k5, k6) = (ks[n - 2], ks[n - 1]);
        let (r5, r6) = (rich[rich.len() - 2], rich[rich.len() - 1]);
        let cauchy = (k6 - k5).abs() <= 1e-2 * k6.abs();
        let settled = (r6 - r5).abs() <= 1e-3 * r6.abs().max(f64::MIN_POSITIVE);
        if cauchy && settled && r6 > 0.0 {
            Ok(r6)
        } else {
            Err(Error::NonConvergent(format!("grid values {ks:?} fail the Cauchy test")))
        }
    }
}
