//! CSBP marginals, path skeletons and truncated flows of subordinators.
//! Every population size is returned as its logarithm (−∞ = extinct,
//! +∞ = exploded).

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};
use crate::mechanism::{Density, Form, Kind, Mechanism};
use crate::quad;
use crate::sampler::{exp1, ln_positive_stable, open01};

/// ln(e^a + e^b).
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY || hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n + 1 - i) as f64 / i as f64).ln()).sum()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(domain("empty time grid"));
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("grid must be nonnegative and strictly increasing"));
    }
    Ok(())
}

/// Draws ln X_{dt} given ln X_0 = `ln_y` for the exactly simulable families.
pub fn ln_transition<R: Rng + ?Sized>(mech: &Mechanism, ln_y: f64, dt: f64, rng: &mut R) -> Result<f64> {
    if !(dt >= 0.0) {
        return Err(domain(format!("negative time step {dt}")));
    }
    if dt == 0.0 || ln_y.is_infinite() {
        return Ok(ln_y);
    }
    let kind = mech.kind().ok_or(Error::UnsupportedMechanism("exact marginals"))?;
    match kind {
        Kind::Neveu => {
            // X_t(y) = y^{1/α} S_α with α = e^{−t}
            let alpha = (-dt).exp();
            Ok(dt.exp() * ln_y + ln_positive_stable(alpha, rng)?)
        }
        Kind::FellerLogistic => {
            let y = ln_y.exp();
            poisson_gamma(y / -(-dt).exp_m1(), dt.exp_m1(), rng)
        }
        Kind::StableSubcritical { alpha } if alpha == 1.0 => poisson_gamma(ln_y.exp() / dt, dt, rng),
        Kind::LogShift => ln_tilted_stable(ln_y.exp(), dt, rng),
        Kind::StableExplosive { alpha } => ln_stable_explosive(alpha, ln_y.exp(), dt, rng),
        _ => Err(Error::UnsupportedMechanism("exact marginals")),
    }
}

/// Σ_{k≤N} E_k with N ~ Poisson(mean), E_k exponential with the given mean.
fn poisson_gamma<R: Rng + ?Sized>(mean: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let n = if mean > 0.0 { Poisson::new(mean).map_err(|e| domain(e.to_string()))?.sample(rng) } else { 0.0 };
    if n == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let g = Gamma::new(n, scale).map_err(|e| domain(e.to_string()))?;
    Ok(g.sample(rng).ln())
}

/// LogShift: E e^{−λX} = exp(−x((1+λ)^α − 1)), an exponentially tilted
/// stable law, drawn by rejection in ⌈x⌉ independent pieces.
fn ln_tilted_stable<R: Rng + ?Sized>(x: f64, t: f64, rng: &mut R) -> Result<f64> {
    let alpha = (-t).exp();
    let parts = x.ceil().max(1.0) as u64;
    let ln_m = (x / parts as f64).ln();
    let mut acc = f64::NEG_INFINITY;
    for _ in 0..parts {
        let ln_piece = loop {
            let ln_y = ln_m / alpha + ln_positive_stable(alpha, rng)?;
            if ln_y <= exp1(rng).ln() {
                break ln_y;
            }
        };
        acc = log_add(acc, ln_piece);
    }
    Ok(acc)
}

/// Ψ(u) = −u^α/(1−α) with 1/(1−α) = k an integer: v_t(λ) = (λ^{1/k} + t)^k
/// expands into independent stable pieces plus the killing term x·t^k.
fn ln_stable_explosive<R: Rng + ?Sized>(alpha: f64, x: f64, t: f64, rng: &mut R) -> Result<f64> {
    let kf = 1.0 / (1.0 - alpha);
    let k = kf.round();
    if (kf - k).abs() > 1e-9 {
        return Err(Error::UnsupportedMechanism("exact marginals (1/(1−α) not an integer; use explosion_time)"));
    }
    let k = k as u64;
    if open01(rng) >= (-x * t.powi(k as i32)).exp() {
        return Ok(f64::INFINITY);
    }
    let mut acc = x.ln();
    for j in 1..k {
        let beta = j as f64 / k as f64;
        let ln_a = x.ln() + ln_binomial(k, j) + (k - j) as f64 * t.ln();
        acc = log_add(acc, ln_a / beta + ln_positive_stable(beta, rng)?);
    }
    Ok(acc)
}

/// ln X_t(x) drawn exactly.
pub fn marginal_exact<R: Rng + ?Sized>(mech: &Mechanism, x: f64, t: f64, rng: &mut R) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain("initial mass must be ≥ 0"));
    }
    ln_transition(mech, x.ln(), t, rng)
}

/// ln X at each grid time, chaining exact transitions from time `t_start`.
pub fn skeleton_from<R: Rng + ?Sized>(
    mech: &Mechanism,
    ln_x: f64,
    t_start: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    if grid[0] < t_start {
        return Err(domain(format!("grid starts at {} before {t_start}", grid[0])));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut prev = t_start;
    let mut cur = ln_x;
    for &t in grid {
        cur = ln_transition(mech, cur, t - prev, rng)?;
        out.push(cur);
        prev = t;
    }
    Ok(out)
}

pub fn skeleton_exact<R: Rng + ?Sized>(mech: &Mechanism, x: f64, grid: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    skeleton_from(mech, x.ln(), 0.0, grid, rng)
}

/// Explosion time ξ_x of Ψ(u) = −u^α/(1−α): P(ξ_x > t) = exp(−x t^{1/(1−α)}).
pub fn explosion_time<R: Rng + ?Sized>(mech: &Mechanism, x: f64, rng: &mut R) -> Result<f64> {
    match mech.kind() {
        Some(Kind::StableExplosive { alpha }) => {
            if !(x > 0.0) {
                return Err(domain("initial mass must be positive"));
            }
            Ok((exp1(rng) / x).powf(1.0 - alpha))
        }
        _ => Err(Error::UnsupportedMechanism("explosion_time")),
    }
}

#[derive(Debug, Clone)]
enum JumpLaw {
    None,
    Atom(f64),
    /// ln r grid with tail masses π((r, ∞)), decreasing
    Table { ln_r: Vec<f64>, tail: Vec<f64> },
}

/// Jump–diffusion discretisation of a CSBP: jumps r ≥ ε are Poissonised,
/// smaller ones are folded into the Gaussian term, and the linear drift is
/// integrated exactly. Approximate: bias O(dt) plus the small-jump error.
#[derive(Debug, Clone)]
pub struct EulerScheme {
    kappa: f64,
    variance: f64,
    rate: f64,
    jumps: JumpLaw,
    /// default step
    pub dt: f64,
    pub epsilon: f64,
}

const MAX_HALVINGS: u32 = 20;

impl EulerScheme {
    pub fn new(mech: &Mechanism, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(domain("jump cutoff ε must be positive"));
        }
        let c = mech.classify();
        let p0 = c.psi_prime_0;
        let dt = if p0.is_finite() && p0 != 0.0 { 1e-3 / p0.abs() } else { 1e-3 };
        if let Some(Kind::FiniteVarDelta { d }) = mech.kind() {
            let (kappa, variance, rate, jumps) =
                if epsilon <= 1.0 { (d, 0.0, 1.0, JumpLaw::Atom(1.0)) } else { (d - 1.0, 1.0, 0.0, JumpLaw::None) };
            return Ok(EulerScheme { kappa, variance, rate, jumps, dt, epsilon });
        }
        let t = match mech.form() {
            Form::Triple(t) => t.clone(),
            Form::Closed(_) => mech.levy_triple().ok_or(Error::UnsupportedMechanism("path_euler"))?,
        };
        let moment = |g: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> Result<f64> {
            t.moment(g, lo, hi).map_err(|e| Error::QuadratureFailure(format!("{e:?}")))
        };
        let no_jumps = t.pi.is_zero();
        let kappa = if no_jumps {
            t.gamma
        } else if epsilon <= 1.0 {
            t.gamma + moment(&|r| r, epsilon, 1.0)?
        } else {
            t.gamma - moment(&|r| r, 1.0, epsilon)?
        };
        let variance = t.sigma * t.sigma + if no_jumps { 0.0 } else { moment(&|r| r * r, 0.0, epsilon)? };
        let (rate, jumps) = if no_jumps {
            (0.0, JumpLaw::None)
        } else {
            let rate = t.tail(epsilon)?;
            (rate, jump_table(&t.pi, epsilon, rate)?)
        };
        Ok(EulerScheme { kappa, variance, rate, jumps, dt, epsilon })
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// π restricted to [ε, ∞), total mass.
    pub fn jump_rate(&self) -> f64 {
        self.rate
    }

    /// A draw from π restricted to [ε, ∞), normalised.
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.jumps {
            JumpLaw::None => 0.0,
            JumpLaw::Atom(r) => *r,
            JumpLaw::Table { ln_r, tail } => {
                let m = open01(rng) * tail[0];
                // first index with tail ≤ m
                let i = tail.partition_point(|v| *v > m);
                let n = tail.len();
                let (a, b) = if i == 0 {
                    (0, 1)
                } else if i >= n {
                    (n - 2, n - 1)
                } else {
                    (i - 1, i)
                };
                let (la, lb) = (tail[a].ln(), tail[b].ln());
                let w = (m.ln() - la) / (lb - la);
                (ln_r[a] + w * (ln_r[b] - ln_r[a])).exp()
            }
        }
    }

    fn predicted_move(&self, x: f64, h: f64) -> (f64, f64) {
        (x * (-self.kappa * h).exp_m1().abs(), 3.0 * (x * self.variance * h).sqrt())
    }

    fn substep<R: Rng + ?Sized>(&self, x: f64, h: f64, rng: &mut R) -> Result<f64> {
        let mut y = x * (-self.kappa * h).exp();
        if self.variance > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            y += (x * self.variance * h).sqrt() * z;
        }
        let mean = x * self.rate * h;
        if mean > 0.0 {
            let n = Poisson::new(mean).map_err(|e| domain(e.to_string()))?.sample(rng) as u64;
            for _ in 0..n {
                y += self.sample_jump(rng);
            }
        }
        Ok(if y > 0.0 { y } else { 0.0 })
    }

    /// Advances `x` over `[t, t+h]`, halving while a step would move more
    /// than half of the mass.
    fn advance<R: Rng + ?Sized>(&self, x: f64, t: f64, h: f64, rng: &mut R) -> Result<f64> {
        let mut level = 0;
        loop {
            let hl = h / 2f64.powi(level as i32);
            let (drift, noise) = self.predicted_move(x, hl);
            if drift + noise <= 0.5 * x {
                let mut y = x;
                for _ in 0..(1u64 << level) {
                    y = self.substep(y, hl, rng)?;
                    if y == 0.0 {
                        break;
                    }
                }
                return Ok(y);
            }
            if level == MAX_HALVINGS {
                // Diffusive fluctuations dominate at this resolution: the
                // mass is at the absorption floor.
                if noise > drift {
                    return Ok(0.0);
                }
                return Err(Error::StepSizeTooLarge { time: t });
            }
            level += 1;
        }
    }

    /// ln X at each grid time (grid relative to the start, t₀ = 0).
    pub fn path<R: Rng + ?Sized>(&self, x: f64, grid: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        check_grid(grid)?;
        let mut out = Vec::with_capacity(grid.len());
        let mut cur = x;
        let mut t = 0.0;
        for &target in grid {
            while t < target && cur > 0.0 {
                let h = self.dt.min(target - t);
                cur = self.advance(cur, t, h, rng)?;
                t = if target - t <= self.dt { target } else { t + h };
            }
            t = target;
            out.push(if cur > 0.0 { cur.ln() } else { f64::NEG_INFINITY });
        }
        Ok(out)
    }
}

fn jump_table(pi: &Density, eps: f64, rate: f64) -> Result<JumpLaw> {
    const POINTS: usize = 400;
    let lo = eps.ln();
    // extend until the remaining tail is negligible
    let mut hi = lo + 5.0;
    let tail_at = |ln_r: f64| quad::log_integral(|x| pi.eval(x), ln_r.exp(), f64::INFINITY, 1e-10);
    while hi < 700.0 {
        match tail_at(hi) {
            Ok(v) if v <= 1e-12 * rate => break,
            Ok(_) => hi += 5.0,
            Err(e) => return Err(Error::QuadratureFailure(format!("jump table: {e:?}"))),
        }
    }
    let ln_r: Vec<f64> = (0..POINTS).map(|i| lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).collect();
    let mut tail = vec![0.0; POINTS];
    tail[POINTS - 1] = tail_at(hi).map_err(|e| Error::QuadratureFailure(format!("{e:?}")))?;
    for i in (0..POINTS - 1).rev() {
        let piece = quad::integrate(|s| pi.eval(s.exp()) * s.exp(), ln_r[i], ln_r[i + 1], 1e-10, 0.0)?;
        tail[i] = tail[i + 1] + piece;
    }
    // an exponentially light tail may vanish in floating point; keep it strictly positive
    for i in 1..POINTS {
        if !(tail[i] < tail[i - 1]) || tail[i] <= 0.0 {
            tail[i] = tail[i - 1] * 0.5;
        }
    }
    Ok(JumpLaw::Table { ln_r, tail })
}

/// Euler path of a general mechanism (see [`EulerScheme`]).
pub fn path_euler<R: Rng + ?Sized>(mech: &Mechanism, x: f64, grid: &[f64], epsilon: f64, rng: &mut R) -> Result<Vec<f64>> {
    EulerScheme::new(mech, epsilon)?.path(x, grid, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowAtom {
    pub x: f64,
    /// 0 for initial individuals
    pub birth: f64,
    pub ln_mass: f64,
    /// ln X^i at each grid time (−∞ before birth)
    pub log_path: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub s_threshold: Option<f64>,
    pub epsilon: f64,
    /// expected mass discarded by the truncation
    pub bias_bound: f64,
}

/// A truncated Poisson realisation of a flow of subordinators.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRealization {
    pub grid: Vec<f64>,
    /// sorted by position
    pub atoms: Vec<FlowAtom>,
    /// finite-variation drift d: the initial mass contributes e^{−dt}x
    pub drift: Option<f64>,
    pub x_max: f64,
    pub truncation: Truncation,
}

impl FlowRealization {
    /// ln X_{t_k}(x_i−) for every atom i (drift included).
    pub fn log_left_limits(&self, k: usize) -> Vec<f64> {
        let t = self.grid[k];
        let mut acc = f64::NEG_INFINITY;
        self.atoms
            .iter()
            .map(|a| {
                let drift = match self.drift {
                    Some(d) if a.x > 0.0 => a.x.ln() - d * t,
                    _ => f64::NEG_INFINITY,
                };
                let left = log_add(acc, drift);
                acc = log_add(acc, a.log_path[k]);
                left
            })
            .collect()
    }

    /// ln X_{t_k}(x).
    pub fn log_mass(&self, k: usize, x: f64) -> f64 {
        let t = self.grid[k];
        let mut acc = match self.drift {
            Some(d) if x > 0.0 => x.ln() - d * t,
            _ => f64::NEG_INFINITY,
        };
        for a in self.atoms.iter().take_while(|a| a.x <= x) {
            acc = log_add(acc, a.log_path[k]);
        }
        acc
    }
}

fn uniform_positions<R: Rng + ?Sized>(n: usize, x_max: f64, rng: &mut R) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| x_max * rng.random::<f64>()).collect();
    xs.sort_by(f64::total_cmp);
    xs
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    Ok(Poisson::new(mean).map_err(|e| domain(e.to_string()))?.sample(rng) as usize)
}

/// Finite-variation flow: X_t(x) = e^{−dt}x + Σ_{x_i≤x, t_i≤t} X^i_{t−t_i},
/// atoms with intensity dx ⊗ e^{−dt}dt ⊗ π(dr) and r ≥ ε, each evolved by
/// the Euler scheme.
pub fn flow_finite_variation<R: Rng + ?Sized>(
    mech: &Mechanism,
    x_max: f64,
    grid: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<FlowRealization> {
    check_grid(grid)?;
    let d = mech.classify().d_coeff;
    if !(d.is_finite() && d > 0.0) {
        return Err(domain(format!("finite-variation flow needs d ∈ (0,∞), got {d}")));
    }
    let scheme = EulerScheme::new(mech, epsilon)?;
    let rate = scheme.jump_rate();
    if !rate.is_finite() {
        return Err(Error::InfiniteRate(epsilon));
    }
    let horizon = grid[grid.len() - 1];
    let time_mass = -(-d * horizon).exp_m1() / d;
    let n = poisson_count(x_max * time_mass * rate, rng)?;
    let xs = uniform_positions(n, x_max, rng);
    let mut atoms = Vec::with_capacity(n);
    for x in xs {
        let birth = -(-open01(rng) * (-(-d * horizon).exp_m1())).ln_1p() / d;
        let r = scheme.sample_jump(rng);
        let first = grid.partition_point(|t| *t < birth);
        let mut log_path = vec![f64::NEG_INFINITY; grid.len()];
        if first < grid.len() {
            let rel: Vec<f64> = grid[first..].iter().map(|t| t - birth).collect();
            let path = if rel[0] == 0.0 {
                let mut p = vec![r.ln()];
                if rel.len() > 1 {
                    p.extend(scheme.path(r, &rel[1..], rng)?);
                }
                p
            } else {
                scheme.path(r, &rel, rng)?
            };
            log_path[first..].copy_from_slice(&path);
        }
        atoms.push(FlowAtom { x, birth, ln_mass: r.ln(), log_path });
    }
    let small_mass = match mech.kind() {
        Some(Kind::FiniteVarDelta { .. }) => if epsilon <= 1.0 { 0.0 } else { 1.0 },
        _ => mech
            .levy_triple()
            .map(|t| t.moment(|r| r, 0.0, epsilon).unwrap_or(f64::INFINITY))
            .unwrap_or(0.0),
    };
    Ok(FlowRealization {
        grid: grid.to_vec(),
        atoms,
        drift: Some(d),
        x_max,
        truncation: Truncation { s_threshold: None, epsilon, bias_bound: x_max * time_mass * small_mass },
    })
}

/// Neveu flow seen from time `s`: X_s(·) is a stable subordinator with
/// Lévy measure (α/Γ(1−α)) r^{−1−α} dr, α = e^{−s}. Atoms above ε arrive at
/// rate ε^{−α}/Γ(1−α) per unit x with Pareto masses and are then chained by
/// exact transitions along `grid` (all times ≥ s).
pub fn flow_neveu<R: Rng + ?Sized>(
    x_max: f64,
    s_threshold: f64,
    epsilon: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<FlowRealization> {
    if !(s_threshold > 0.0 && epsilon > 0.0) {
        return Err(domain("s_threshold and ε must be positive"));
    }
    if !(x_max >= 0.0) {
        return Err(domain("x_max must be ≥ 0"));
    }
    check_grid(grid)?;
    let mech = Mechanism::neveu();
    let alpha = (-s_threshold).exp();
    let g = gamma(1.0 - alpha);
    let rate = epsilon.powf(-alpha) / g;
    let n = poisson_count(x_max * rate, rng)?;
    let xs = uniform_positions(n, x_max, rng);
    let mut atoms = Vec::with_capacity(n);
    for x in xs {
        let ln_mass = epsilon.ln() - open01(rng).ln() / alpha;
        let log_path = skeleton_from(&mech, ln_mass, s_threshold, grid, rng)?;
        atoms.push(FlowAtom { x, birth: 0.0, ln_mass, log_path });
    }
    let bias = x_max * alpha * epsilon.powf(1.0 - alpha) / ((1.0 - alpha) * g);
    Ok(FlowRealization {
        grid: grid.to_vec(),
        atoms,
        drift: None,
        x_max,
        truncation: Truncation { s_threshold: Some(s_threshold), epsilon, bias_bound: bias },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::RngStream;

    #[test]
    fn log_add_edges() {
        assert_eq!(log_add(f64::NEG_INFINITY, 2.0), 2.0);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_add(1e6, 0.0), 1e6);
    }

    #[test]
    fn neveu_at_time_zero_is_identity() {
        let mut r = RngStream::new(5, 0).rng();
        assert_eq!(marginal_exact(&Mechanism::neveu(), 2.5, 0.0, &mut r).unwrap(), 2.5f64.ln());
    }

    #[test]
    fn extinct_is_absorbing() {
        let mut r = RngStream::new(5, 0).rng();
        let p = skeleton_exact(&Mechanism::feller_logistic(), 0.0, &[1.0, 2.0], &mut r).unwrap();
        assert!(p.iter().all(|v| *v == f64::NEG_INFINITY));
        let e = path_euler(&Mechanism::finite_var_delta(2.0).unwrap(), 0.0, &[0.5, 1.0], 0.5, &mut r).unwrap();
        assert!(e.iter().all(|v| *v == f64::NEG_INFINITY));
    }

    #[test]
    fn unsupported_families() {
        let mut r = RngStream::new(5, 0).rng();
        let f = Mechanism::finite_var_delta(2.0).unwrap();
        assert!(matches!(marginal_exact(&f, 1.0, 1.0, &mut r), Err(Error::UnsupportedMechanism(_))));
        assert!(explosion_time(&Mechanism::neveu(), 1.0, &mut r).is_err());
    }

    #[test]
    fn empty_flows() {
        let mut r = RngStream::new(5, 0).rng();
        let f = flow_neveu(0.0, 1.0, 0.01, &[1.0, 2.0], &mut r).unwrap();
        assert!(f.atoms.is_empty());
        let m = Mechanism::finite_var_delta(2.0).unwrap();
        let g = flow_finite_variation(&m, 0.0, &[1.0], 0.5, &mut r).unwrap();
        assert!(g.atoms.is_empty());
        assert_eq!(g.log_mass(0, 0.0), f64::NEG_INFINITY);
    }
}
