use csbp_core::cumulant::CumulantSolver;
use csbp_core::mechanism::Mechanism;
use csbp_core::sampler::RngStream;
use csbp_core::simulate::{
    explosion_time, flow_finite_variation, flow_neveu, log_add, marginal_exact, path_euler, skeleton_exact,
};
use csbp_core::verify::two_sample_ks;
use statrs::function::gamma::gamma;

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn neveu_laplace_at_one() {
    let m = Mechanism::neveu();
    for (k, t) in [0.5, 1.0, 3.0].into_iter().enumerate() {
        let s = RngStream::new(21, k as u64);
        let v: Vec<f64> = (0..100_000u64)
            .map(|i| (-marginal_exact(&m, 1.0, t, &mut s.child(i).rng()).unwrap().exp()).exp())
            .collect();
        let (mean, se) = mean_se(&v);
        assert!((mean - (-1f64).exp()).abs() < 3.0 * se, "t={t}");
    }
}

#[test]
fn feller_extinction_probability() {
    let m = Mechanism::feller_logistic();
    let mut r = RngStream::new(22, 0).rng();
    let n = 100_000;
    let dead = (0..n).filter(|_| marginal_exact(&m, 1.0, 1.0, &mut r).unwrap() == f64::NEG_INFINITY).count();
    let e = 1f64.exp();
    let p = (-e / (e - 1.0)).exp();
    assert!((p - 0.2056).abs() < 1e-4);
    let f = dead as f64 / n as f64;
    assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{f} vs {p}");
}

#[test]
fn other_exact_families() {
    // Laplace transforms against the closed-form cumulant
    for (k, m) in [Mechanism::log_shift(), Mechanism::stable_subcritical(1.0).unwrap(), Mechanism::stable_explosive(0.5).unwrap()]
        .into_iter()
        .enumerate()
    {
        let solver = CumulantSolver::new(m.clone());
        let (x, t, lam) = (1.5, 0.7, 0.8);
        let want = (-x * solver.v_forward(t, lam).unwrap()).exp();
        let s = RngStream::new(23, k as u64);
        let v: Vec<f64> = (0..100_000u64)
            .map(|i| (-lam * marginal_exact(&m, x, t, &mut s.child(i).rng()).unwrap().exp()).exp())
            .collect();
        let (mean, se) = mean_se(&v);
        assert!((mean - want).abs() < 3.0 * se, "{m:?}: {mean} vs {want}");
    }
}

#[test]
fn time_zero_is_identity() {
    let mut r = RngStream::new(24, 0).rng();
    assert_eq!(marginal_exact(&Mechanism::neveu(), 3.0, 0.0, &mut r).unwrap(), 3f64.ln());
}

#[test]
fn neveu_two_steps_match_one() {
    let m = Mechanism::neveu();
    let (a, b) = (RngStream::new(25, 0), RngStream::new(25, 1));
    let n = 100_000u64;
    let two: Vec<f64> = (0..n).map(|i| skeleton_exact(&m, 1.0, &[1.0, 2.0], &mut a.child(i).rng()).unwrap()[1]).collect();
    let one: Vec<f64> = (0..n).map(|i| marginal_exact(&m, 1.0, 2.0, &mut b.child(i).rng()).unwrap()).collect();
    let d = two_sample_ks(&two, &one).unwrap();
    assert!(d < 0.01, "{d}");
}

#[test]
fn feller_conditional_extinction() {
    let m = Mechanism::feller_logistic();
    let solver = CumulantSolver::new(m.clone());
    let vbar = solver.vbar(1.0).unwrap();
    let mut r = RngStream::new(26, 0).rng();
    let (mut alive, mut died, mut expected) = (0usize, 0usize, 0.0);
    for _ in 0..100_000 {
        let p = skeleton_exact(&m, 1.0, &[0.5, 1.5], &mut r).unwrap();
        if p[0] > f64::NEG_INFINITY {
            alive += 1;
            expected += (-p[0].exp() * vbar).exp();
            if p[1] == f64::NEG_INFINITY {
                died += 1;
            }
        } else {
            assert_eq!(p[1], f64::NEG_INFINITY);
        }
    }
    let (f, q) = (died as f64 / alive as f64, expected / alive as f64);
    assert!((f - q).abs() < 3.0 * (q * (1.0 - q) / alive as f64).sqrt(), "{f} vs {q}");
}

#[test]
fn euler_mean_finite_variation() {
    let m = Mechanism::finite_var_delta(2.0).unwrap();
    let s = RngStream::new(27, 0);
    let v: Vec<f64> = (0..20_000u64)
        .map(|i| path_euler(&m, 1.0, &[1.0], 0.5, &mut s.child(i).rng()).unwrap()[0].exp())
        .collect();
    let (mean, se) = mean_se(&v);
    assert!((mean - (-1f64).exp()).abs() < 3.0 * se, "{mean} ± {se}");
}

#[test]
fn euler_laplace_against_cumulant() {
    let cases = [(Mechanism::triple(Mechanism::feller_logistic().levy_triple().unwrap()).unwrap(), 0.5), (Mechanism::triple(Mechanism::log_shift().levy_triple().unwrap()).unwrap(), 0.01)];
    for (k, (m, eps)) in cases.into_iter().enumerate() {
        let want = (-CumulantSolver::new(m.clone()).v_forward(1.0, 1.0).unwrap()).exp();
        let s = RngStream::new(28, k as u64);
        let v: Vec<f64> = (0..20_000u64)
            .map(|i| (-path_euler(&m, 1.0, &[1.0], eps, &mut s.child(i).rng()).unwrap()[0].exp()).exp())
            .collect();
        let (mean, se) = mean_se(&v);
        assert!((mean - want).abs() < 3.0 * se + 0.01, "case {k}: {mean} vs {want}");
    }
}

#[test]
fn zero_mass_paths() {
    let mut r = RngStream::new(29, 0).rng();
    let m = Mechanism::triple(Mechanism::neveu().levy_triple().unwrap()).unwrap();
    let p = path_euler(&m, 0.0, &[0.5, 1.0], 0.1, &mut r).unwrap();
    assert!(p.iter().all(|v| *v == f64::NEG_INFINITY));
}

#[test]
fn finite_variation_atom_rate() {
    let m = Mechanism::finite_var_delta(2.0).unwrap();
    let (x_max, t) = (4.0f64, 3.0f64);
    let want = x_max * (1.0 - (-2.0 * t).exp()) / 2.0;
    assert!((want / x_max - 0.5).abs() < 0.002);
    let s = RngStream::new(30, 0);
    let counts: Vec<f64> = (0..1000u64)
        .map(|i| flow_finite_variation(&m, x_max, &[t], 0.5, &mut s.child(i).rng()).unwrap().atoms.len() as f64)
        .collect();
    let (mean, se) = mean_se(&counts);
    assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want}");
    let empty = flow_finite_variation(&m, 0.0, &[1.0], 0.5, &mut s.rng()).unwrap();
    assert!(empty.atoms.is_empty());
    assert_eq!(empty.log_mass(0, 0.0), f64::NEG_INFINITY);
}

#[test]
fn flow_prefix_sums_are_monotone() {
    let m = Mechanism::finite_var_delta(2.0).unwrap();
    let grid = [0.5, 1.0, 2.0];
    let s = RngStream::new(31, 0);
    for i in 0..20 {
        let fr = flow_finite_variation(&m, 5.0, &grid, 0.5, &mut s.child(i).rng()).unwrap();
        assert!(fr.atoms.windows(2).all(|w| w[0].x <= w[1].x));
        for k in 0..grid.len() {
            let xs: Vec<f64> = (0..=50).map(|j| 0.1 * j as f64).collect();
            let masses: Vec<f64> = xs.iter().map(|x| fr.log_mass(k, *x)).collect();
            assert!(masses.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

/// Atoms whose progeny is large and still growing at T are (approximately) a
/// Poisson process of intensity ρ.
#[test]
fn prolific_count() {
    let m = Mechanism::finite_var_delta(0.5).unwrap();
    let rho = m.classify().rho;
    let x = 2.0;
    let grid: Vec<f64> = (0..=20).map(|k| k as f64).collect();
    let s = RngStream::new(32, 0);
    let counts: Vec<f64> = (0..300u64)
        .map(|i| {
            let fr = flow_finite_variation(&m, x, &grid, 0.5, &mut s.child(i).rng()).unwrap();
            let k = grid.len() - 1;
            fr.atoms
                .iter()
                .filter(|a| a.log_path[k] > 0.0 && a.log_path[k] > a.log_path[k - 1] && a.log_path[k - 1] > a.log_path[k - 2])
                .count() as f64
        })
        .collect();
    let (mean, se) = mean_se(&counts);
    assert!((mean - rho * x).abs() < 3.0 * se, "{mean} vs {}", rho * x);
}

#[test]
fn neveu_flow_rate() {
    let (s, eps) = (1.0f64, 0.01f64);
    let alpha = (-s).exp();
    let rate: f64 = eps.powf(-alpha) / gamma(1.0 - alpha);
    assert!((rate - 3.8327).abs() < 1e-3, "{rate}");
    let st = RngStream::new(33, 0);
    let counts: Vec<f64> =
        (0..20_000u64).map(|i| flow_neveu(1.0, s, eps, &[s], &mut st.child(i).rng()).unwrap().atoms.len() as f64).collect();
    let (mean, se) = mean_se(&counts);
    assert!((mean - rate).abs() < 3.0 * se);
    assert!(flow_neveu(0.0, s, eps, &[s], &mut st.rng()).unwrap().atoms.is_empty());
}

#[test]
fn neveu_flow_prefix_law() {
    let s = 1.0;
    let n = 20_000u64;
    let (a, b) = (RngStream::new(34, 0), RngStream::new(34, 1));
    let flow: Vec<f64> = (0..n)
        .map(|i| {
            let fr = flow_neveu(1.0, s, 1e-4, &[s], &mut a.child(i).rng()).unwrap();
            fr.atoms.iter().fold(f64::NEG_INFINITY, |acc, at| log_add(acc, at.log_path[0]))
        })
        .collect();
    let exact: Vec<f64> = (0..n).map(|i| marginal_exact(&Mechanism::neveu(), 1.0, s, &mut b.child(i).rng()).unwrap()).collect();
    let d = two_sample_ks(&flow, &exact).unwrap();
    assert!(d < 0.02, "{d}");
}

#[test]
fn explosion_time_law() {
    let m = Mechanism::stable_explosive(0.5).unwrap();
    let mut r = RngStream::new(35, 0).rng();
    let n = 100_000;
    let xi: Vec<f64> = (0..n).map(|_| explosion_time(&m, 1.0, &mut r).unwrap()).collect();
    let p = xi.iter().filter(|t| **t > 1.0).count() as f64 / n as f64;
    let q = (-1f64).exp();
    assert!((p - q).abs() < 3.0 * (q * (1.0 - q) / n as f64).sqrt());
    // median (ln 2 / x)^{1−α}
    let x = 0.01;
    let mut small: Vec<f64> = (0..20_001).map(|_| explosion_time(&m, x, &mut r).unwrap()).collect();
    small.sort_by(f64::total_cmp);
    let med = (2f64.ln() / x).sqrt();
    assert!((small[10_000] / med - 1.0).abs() < 0.02, "{} vs {med}", small[10_000]);
}
