//! Numerical kernels: adaptive Gauss–Kronrod quadrature, integrals over
//! half-lines in logarithmic coordinates, bracketed root finding and an
//! embedded Dormand–Prince integrator used as an ODE oracle.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 21-point Kronrod abscissae; odd indices are the embedded 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

const MAX_INTERVALS: usize = 4000;

/// One G10K21 panel: (estimate, error estimate, |f| integral).
pub fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[10];
    let mut gauss = 0.0;
    let mut absk = fc.abs() * WGK[10];
    let mut fv = [0.0f64; 20];
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        kron += WGK[j] * (f1 + f2);
        absk += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kron;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let result = kron * h;
    let resabs = absk * h.abs();
    let resasc = asc * h.abs();
    let mut err = ((kron - gauss) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let round = 50.0 * f64::EPSILON * resabs;
    if round > err {
        err = round;
    }
    (result, err, resabs)
}

struct Panel {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Adaptive quadrature of `f` over `[a, b]` to `max(abs, rel·|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel: f64, abs: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::QuadratureFailure(format!("infinite limits [{a}, {b}]")));
    }
    let (v, e, _) = gk21(&f, a, b);
    if !v.is_finite() {
        return Err(Error::QuadratureFailure(format!("non-finite integrand on [{a}, {b}]")));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, val: v, err: e });
    let mut total = v;
    let mut total_err = e;
    while heap.len() < MAX_INTERVALS {
        if total_err <= abs.max(rel * total.abs()) {
            return Ok(total);
        }
        let worst = heap.pop().expect("heap is never empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            // interval exhausted in floating point; keep what we have
            heap.push(worst);
            break;
        }
        let (v1, e1, _) = gk21(&f, worst.a, m);
        let (v2, e2, _) = gk21(&f, m, worst.b);
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(Error::QuadratureFailure(format!(
                "non-finite integrand near {m}"
            )));
        }
        total += v1 + v2 - worst.val;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: m, val: v1, err: e1 });
        heap.push(Panel { a: m, b: worst.b, val: v2, err: e2 });
    }
    // recompute sums to shed accumulated drift
    let total: f64 = heap.iter().map(|p| p.val).sum();
    let total_err: f64 = heap.iter().map(|p| p.err).sum();
    if total_err <= 1e3 * abs.max(rel * total.abs()) {
        Ok(total)
    } else {
        Err(Error::QuadratureFailure(format!(
            "error estimate {total_err:e} above tolerance on [{a}, {b}]"
        )))
    }
}

/// Outcome of a half-line integral that failed.
#[derive(Debug, Clone, PartialEq)]
pub enum TailError {
    Diverges,
    Failure(String),
}

impl From<Error> for TailError {
    fn from(e: Error) -> Self {
        TailError::Failure(e.to_string())
    }
}

/// ∫ h(s) ds from `s0` to `dir·∞` (`dir = ±1`).
///
/// The range is swept in doubling chunks; once the integrand decays
/// geometrically the remainder is closed with the tail `h(s_end)/p`, where
/// `p` is the observed decay rate per unit `s`. `limit` caps `|s|`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(
    h: F,
    s0: f64,
    dir: f64,
    rel: f64,
    limit: f64,
) -> std::result::Result<f64, TailError> {
    let mut acc = 0.0;
    let mut s = s0;
    let mut len = 4.0;
    loop {
        let mut next = s + dir * len;
        let capped = next.abs() >= limit;
        if capped {
            next = dir * limit;
        }
        if (next - s) * dir <= 0.0 {
            return Err(TailError::Failure(format!("start {s0} beyond limit {limit}")));
        }
        let (a, b) = if dir > 0.0 { (s, next) } else { (next, s) };
        acc += integrate(&h, a, b, rel * 0.1, 0.0)?;
        s = next;
        let h_end = h(s);
        let h_prev = h(s - dir);
        if h_end == 0.0 {
            return Ok(acc);
        }
        let p = (h_prev / h_end).ln();
        let tail = if p.is_finite() && p > 1e-3 { h_end / p } else { f64::INFINITY };
        if tail.abs() <= rel * acc.abs() {
            return Ok(acc + tail);
        }
        if (s - s0).abs() > 200.0 && !(p > 0.01) {
            return Err(TailError::Diverges);
        }
        if capped {
            return if tail.is_finite() && tail.abs() <= 1e-6 * acc.abs() {
                Ok(acc + tail)
            } else if tail.is_finite() {
                Err(TailError::Failure(format!("tail {tail:e} unresolved at |s| = {limit}")))
            } else {
                Err(TailError::Diverges)
            };
        }
        len *= 2.0;
    }
}

/// ∫_lo^hi g(x) dx with `lo ∈ [0, ∞)` and `hi ∈ (lo, ∞]`, evaluated in
/// `x = e^s`; 0 and ∞ are infinite ends in `s`.
pub fn log_integral<F: Fn(f64) -> f64>(
    g: F,
    lo: f64,
    hi: f64,
    rel: f64,
) -> std::result::Result<f64, TailError> {
    let h = |s: f64| {
        let x = s.exp();
        let v = g(x) * x;
        if v.is_nan() {
            0.0
        } else {
            v
        }
    };
    const LIMIT: f64 = 700.0;
    let sa = if lo > 0.0 { Some(lo.ln()) } else { None };
    let sb = if hi.is_finite() { Some(hi.ln()) } else { None };
    match (sa, sb) {
        (Some(a), Some(b)) => Ok(integrate(h, a, b, rel, 0.0)?),
        (None, Some(b)) => integrate_half_line(h, b, -1.0, rel, LIMIT),
        (Some(a), None) => integrate_half_line(h, a, 1.0, rel, LIMIT),
        (None, None) => {
            let left = integrate_half_line(h, 0.0, -1.0, rel, LIMIT)?;
            let right = integrate_half_line(h, 0.0, 1.0, rel, LIMIT)?;
            Ok(left + right)
        }
    }
}

/// Bisection on a sign change; `f(lo)` and `f(hi)` must have opposite signs.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoSolution(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= rel_tol * mid.abs().max(f64::MIN_POSITIVE) || mid == lo || mid == hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Newton's method safeguarded by a bracket `[lo, hi]` with a sign change.
/// `fdf` returns the residual and its derivative.
pub fn newton_bracketed<F: FnMut(f64) -> Result<(f64, f64)>>(
    mut fdf: F,
    mut lo: f64,
    mut hi: f64,
    abs_tol: f64,
) -> Result<f64> {
    let (flo, _) = fdf(lo)?;
    let (fhi, _) = fdf(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoSolution(format!("no sign change on [{lo}, {hi}]")));
    }
    let rising = fhi > 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = fdf(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx > 0.0) == rising {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= abs_tol || hi - lo <= abs_tol {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Integrates the scalar ODE `y' = f(t, y)` from `t0` to `t1` with the
/// Dormand–Prince 5(4) pair.
pub fn rk45<F: Fn(f64, f64) -> f64>(
    f: F,
    t0: f64,
    y0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
) -> Result<f64> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    if t1 == t0 {
        return Ok(y0);
    }
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut y = y0;
    let mut h = dir * (t1 - t0).abs().min(1e-3);
    for _ in 0..2_000_000 {
        if (t1 - t) * dir <= 0.0 {
            return Ok(y);
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        let mut k = [0.0f64; 7];
        for i in 0..7 {
            let mut yi = y;
            for j in 0..i {
                yi += h * A[i][j] * k[j];
            }
            k[i] = f(t + C[i] * h, yi);
        }
        let mut y5 = y;
        let mut y4 = y;
        for i in 0..7 {
            y5 += h * B5[i] * k[i];
            y4 += h * B4[i] * k[i];
        }
        if !y5.is_finite() {
            h *= 0.25;
            continue;
        }
        let scale = atol + rtol * y.abs().max(y5.abs());
        let err = (y5 - y4).abs() / scale;
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Err(Error::NonConvergent(format!("ODE step budget exhausted at t={t}")))
}
