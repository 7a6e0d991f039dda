//! Extremal-F processes: records of Poisson point processes, finite
//! dimensional laws, the Markov jump construction and max-merging.

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::renorm::Renormalizer;
use crate::sampler::{exp1, invert_decreasing, open01, Atom, PointConfig};
use crate::simulate::FlowRealization;

/// A distribution function on the line, through Q = −ln F.
pub trait Cdf: Send + Sync {
    fn cdf(&self, z: f64) -> f64;

    fn q(&self, z: f64) -> f64 {
        -self.cdf(z).ln()
    }

    /// The level y > `above` with Q(y) = q, for 0 < q < Q(above).
    fn q_inverse(&self, q: f64, above: f64) -> f64 {
        invert_decreasing(|z| self.q(z), q, above)
    }
}

/// F^p.
#[derive(Debug, Clone, Copy)]
pub struct Powered<C> {
    pub inner: C,
    pub power: f64,
}

impl<C: Cdf> Cdf for Powered<C> {
    fn cdf(&self, z: f64) -> f64 {
        self.inner.cdf(z).powf(self.power)
    }

    fn q(&self, z: f64) -> f64 {
        self.power * self.inner.q(z)
    }

    fn q_inverse(&self, q: f64, above: f64) -> f64 {
        self.inner.q_inverse(q / self.power, above)
    }
}

impl Cdf for Renormalizer {
    fn cdf(&self, z: f64) -> f64 {
        self.limit_cdf(z)
    }

    fn q(&self, z: f64) -> f64 {
        if !(z >= 0.0) {
            return f64::INFINITY;
        }
        self.g_inverse(z).unwrap_or(f64::NAN)
    }
}

/// Running records Z(x) = sup_{x_i ≤ x} Z_i as a right-continuous step
/// function; `base` is the value before the first jump.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordProcess {
    /// strictly increasing in both coordinates
    pub jumps: Vec<Atom>,
    pub x_max: f64,
    pub base: f64,
}

impl RecordProcess {
    pub fn value(&self, x: f64) -> f64 {
        let i = self.jumps.partition_point(|a| a.x <= x);
        if i == 0 {
            self.base
        } else {
            self.jumps[i - 1].z
        }
    }

    pub fn left_limit(&self, x: f64) -> f64 {
        let i = self.jumps.partition_point(|a| a.x < x);
        if i == 0 {
            self.base
        } else {
            self.jumps[i - 1].z
        }
    }

    pub fn jump_at(&self, x: f64) -> f64 {
        self.value(x) - self.left_limit(x)
    }

    /// Number of jumps in (a, b].
    pub fn jumps_in(&self, a: f64, b: f64) -> usize {
        self.jumps.iter().filter(|j| j.x > a && j.x <= b).count()
    }

    /// Checks the step-function invariants.
    pub fn is_monotone(&self) -> bool {
        self.jumps.windows(2).all(|w| w[1].x > w[0].x && w[1].z > w[0].z)
            && self.jumps.first().is_none_or(|j| j.z > self.base)
    }
}

/// Strict new maxima of marks swept left to right; equal marks are not
/// records, so ties go to the earlier atom.
pub fn records_from_marks(marks: &[Atom], x_max: f64, base: f64) -> RecordProcess {
    let mut sorted: Vec<Atom> = marks.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut best = base;
    let mut jumps = Vec::new();
    for a in sorted {
        if a.z > best {
            best = a.z;
            jumps.push(a);
        }
    }
    RecordProcess { jumps, x_max, base }
}

/// Records of a point configuration; Z is the floor before the first atom.
pub fn records_from_points(pc: &PointConfig) -> RecordProcess {
    records_from_marks(&pc.atoms, pc.x_max, pc.z_floor)
}

/// P(Z(x_1) ≤ z_1, …, Z(x_n) ≤ z_n) = Π F^{x_i − x_{i−1}}(z'_i) with
/// z'_i = min_{k ≥ i} z_k.
pub fn fdd_probability<C: Cdf + ?Sized>(f: &C, xs: &[f64], zs: &[f64]) -> Result<f64> {
    if xs.len() != zs.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: zs.len() });
    }
    if xs.first().is_some_and(|x| !(*x >= 0.0)) || xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("positions must be nonnegative and strictly increasing"));
    }
    let mut running = f64::INFINITY;
    let mut ln_p = 0.0;
    for i in (0..xs.len()).rev() {
        running = running.min(zs[i]);
        let width = xs[i] - if i == 0 { 0.0 } else { xs[i - 1] };
        if width > 0.0 {
            ln_p -= width * f.q(running);
        }
    }
    Ok(ln_p.exp())
}

/// Extremal-F process from its jump chain: holding time Exp(Q(v)) in state
/// v, then a jump to Y with P(Y ≤ y) = 1 − Q(y)/Q(v).
pub fn markov_jump_simulate<C: Cdf + ?Sized, R: Rng + ?Sized>(
    f: &C,
    x_max: f64,
    z_start: f64,
    rng: &mut R,
) -> Result<RecordProcess> {
    let mut q = f.q(z_start);
    if !(q < f64::INFINITY) {
        return Err(Error::InstantaneousState(z_start));
    }
    let mut jumps = Vec::new();
    let mut x = 0.0;
    let mut v = z_start;
    while q > 0.0 {
        x += exp1(rng) / q;
        if x > x_max {
            break;
        }
        let next = f.q_inverse(open01(rng) * q, v);
        if !(next > v) {
            break;
        }
        v = next;
        q = f.q(v);
        jumps.push(Atom { x, z: v });
    }
    Ok(RecordProcess { jumps, x_max, base: z_start })
}

/// Pointwise maximum of two record processes on the same window.
pub fn max_merge(a: &RecordProcess, b: &RecordProcess) -> Result<RecordProcess> {
    if a.x_max != b.x_max {
        return Err(Error::DomainMismatch(a.x_max, b.x_max));
    }
    let base = a.base.max(b.base);
    let mut all: Vec<Atom> = a.jumps.iter().chain(b.jumps.iter()).copied().collect();
    all.sort_by(|p, q| p.x.total_cmp(&q.x));
    Ok(records_from_marks(&all, a.x_max, base))
}

/// Finite-horizon proxy for super-individuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperCriterion {
    /// ΔX_t(x)/X_t(x−) must exceed this at the final grid time
    pub ratio: f64,
    /// ...and increase strictly over this many trailing grid points
    pub window: usize,
    /// relative margin for "strictly"
    pub margin: f64,
}

impl Default for SuperCriterion {
    fn default() -> Self {
        SuperCriterion { ratio: 100.0, window: 3, margin: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomVerdict {
    pub x: f64,
    /// ln(ΔX_t/X_t(x−)) at the final grid time
    pub ln_ratio: f64,
    /// ln Z_i
    pub ln_z: f64,
    /// ln(Z_i / Z(x_i−)); +∞ for the first record
    pub ln_gap: f64,
    pub is_super: bool,
    pub is_record: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperDetection {
    pub record_jump_xs: Vec<f64>,
    pub empirical_super_xs: Vec<f64>,
    pub atoms: Vec<AtomVerdict>,
}

/// Compares the record jumps of Z_i = e^{∓t}G(1/X^i_t ∧ ρ) at the final
/// grid time with atoms whose progeny overwhelms everything below them.
pub fn detect_super_individuals(fr: &FlowRealization, rn: &Renormalizer, crit: &SuperCriterion) -> SuperDetection {
    let k_last = fr.grid.len().saturating_sub(1);
    let t = fr.grid[k_last];
    let lo = (k_last + 1).saturating_sub(crit.window.max(1));
    let lefts: Vec<Vec<f64>> = (lo..=k_last).map(|k| fr.log_left_limits(k)).collect();

    let mut running = f64::NEG_INFINITY;
    let mut atoms = Vec::with_capacity(fr.atoms.len());
    for (i, a) in fr.atoms.iter().enumerate() {
        let ratios: Vec<f64> = (lo..=k_last)
            .map(|k| {
                let (num, den) = (a.log_path[k], lefts[k - lo][i]);
                if num == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else if den == f64::NEG_INFINITY {
                    f64::INFINITY
                } else {
                    num - den
                }
            })
            .collect();
        let last = ratios[ratios.len() - 1];
        let increasing = ratios.windows(2).all(|w| w[1] == f64::INFINITY || w[1] > w[0] + crit.margin * w[0].abs());
        let is_super = last == f64::INFINITY || (last > crit.ratio.ln() && increasing);
        let ln_z = rn.ln_statistic(t, a.log_path[k_last]);
        let is_record = ln_z > running;
        let ln_gap = if running == f64::NEG_INFINITY { f64::INFINITY } else { ln_z - running };
        if is_record {
            running = ln_z;
        }
        atoms.push(AtomVerdict { x: a.x, ln_ratio: last, ln_z, ln_gap, is_super, is_record });
    }
    SuperDetection {
        record_jump_xs: atoms.iter().filter(|a| a.is_record).map(|a| a.x).collect(),
        empirical_super_xs: atoms.iter().filter(|a| a.is_super).map(|a| a.x).collect(),
        atoms,
    }
}
