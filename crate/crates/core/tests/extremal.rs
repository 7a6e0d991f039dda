use std::sync::Arc;

use csbp_core::cumulant::CumulantSolver;
use csbp_core::extremal::{
    detect_super_individuals, fdd_probability, markov_jump_simulate, max_merge, records_from_marks, records_from_points, Cdf,
    SuperCriterion,
};
use csbp_core::mechanism::Mechanism;
use csbp_core::renorm::Renormalizer;
use csbp_core::sampler::{sample_ppp, Atom, RngStream, Tail};
use csbp_core::simulate::{flow_neveu, FlowAtom, FlowRealization, Truncation};
use csbp_core::verify::{ks_distance, two_sample_ks, Law};
use proptest::prelude::*;

#[test]
fn empty_config_is_constant_floor() {
    let pc = sample_ppp(&Tail::Exponential { scale: 1.0 }, 0.0, -5.0, &mut RngStream::new(1, 0).rng()).unwrap();
    let r = records_from_points(&pc);
    assert!(r.jumps.is_empty());
    assert_eq!(r.value(0.0), -5.0);
}

#[test]
fn gumbel_records_law() {
    let tail = Tail::Exponential { scale: 1.0 };
    let s = RngStream::new(41, 0);
    let z: Vec<f64> =
        (0..20_000).map(|i| records_from_points(&sample_ppp(&tail, 1.0, -5.0, &mut s.child(i).rng()).unwrap()).value(1.0)).collect();
    let d = ks_distance(&z, |v| Law::Gumbel.cdf(v)).unwrap();
    assert!(d < 0.02, "{d}");
}

#[test]
fn record_jump_intensity_is_dx_over_x() {
    let tail = Tail::Exponential { scale: 1.0 };
    let s = RngStream::new(42, 0);
    let n = 10_000;
    let total: usize =
        (0..n).map(|i| records_from_points(&sample_ppp(&tail, 1.0, -5.0, &mut s.child(i).rng()).unwrap()).jumps_in(0.1, 1.0)).sum();
    let m = total as f64 / n as f64;
    assert!((m / 10f64.ln() - 1.0).abs() < 0.05, "{m}");
}

#[test]
fn one_dimensional_fdd() {
    let f = Law::Frechet { beta: 1.0, scale: 1.0 };
    for (x, z) in [(0.5, 0.7), (2.0, 3.0), (1.0, 1.0)] {
        assert_eq!(fdd_probability(&f, &[x], &[z]).unwrap(), (-x * f.q(z)).exp());
    }
    let p = fdd_probability(&f, &[1.0, 2.0], &[1.5, 2.5]).unwrap();
    assert!((p - 0.3441).abs() < 1e-3);
}

#[test]
fn fdd_matches_record_construction() {
    let law = Law::Frechet { beta: 1.0, scale: 1.0 };
    let tail = Tail::Power { scale: 1.0, beta: 1.0 };
    let n = 40_000;
    for (k, (xs, zs)) in [(vec![1.0, 2.0], vec![1.5, 2.5]), (vec![0.5, 1.0, 2.0], vec![1.0, 0.8, 3.0]), (vec![1.0, 3.0], vec![2.0, 2.0])]
        .into_iter()
        .enumerate()
    {
        let s = RngStream::new(43, k as u64);
        let hits = (0..n)
            .filter(|i| {
                let r = records_from_points(&sample_ppp(&tail, xs[xs.len() - 1], 0.05, &mut s.child(*i).rng()).unwrap());
                xs.iter().zip(&zs).all(|(x, z)| r.value(*x) <= *z)
            })
            .count();
        let exact = fdd_probability(&law, &xs, &zs).unwrap();
        assert!((hits as f64 / n as f64 - exact).abs() < 0.01);
    }
}

#[test]
fn gumbel_holding_rate() {
    assert_eq!(Law::Gumbel.q(0.0), 1.0);
    let r = markov_jump_simulate(&Law::Gumbel, 0.0, 0.3, &mut RngStream::new(44, 0).rng()).unwrap();
    assert!(r.jumps.is_empty());
    assert_eq!(r.value(0.0), 0.3);
}

#[test]
fn markov_chain_matches_records() {
    let n = 20_000;
    let (a, b) = (RngStream::new(45, 0), RngStream::new(45, 1));
    let tail = Tail::Exponential { scale: 1.0 };
    let rec: Vec<f64> =
        (0..n).map(|i| records_from_points(&sample_ppp(&tail, 1.0, -4.0, &mut a.child(i).rng()).unwrap()).value(1.0)).collect();
    let mk: Vec<f64> = (0..n).map(|i| markov_jump_simulate(&Law::Gumbel, 1.0, -4.0, &mut b.child(i).rng()).unwrap().value(1.0)).collect();
    let d = two_sample_ks(&rec, &mk).unwrap();
    assert!(d < 0.02, "{d}");
}

fn neveu_renormalizer(anchor: f64) -> Renormalizer {
    Renormalizer::with_anchor(Arc::new(CumulantSolver::new(Mechanism::neveu())), anchor).unwrap()
}

#[test]
fn single_atom_flow() {
    let fr = FlowRealization {
        grid: vec![1.0, 2.0, 3.0],
        atoms: vec![FlowAtom { x: 0.4, birth: 0.0, ln_mass: 0.0, log_path: vec![2.0, 5.0, 20.0] }],
        drift: None,
        x_max: 1.0,
        truncation: Truncation { s_threshold: Some(1.0), epsilon: 0.1, bias_bound: 0.0 },
    };
    let det = detect_super_individuals(&fr, &neveu_renormalizer(0.5), &SuperCriterion::default());
    assert_eq!(det.record_jump_xs, vec![0.4]);
    assert_eq!(det.empirical_super_xs, vec![0.4]);
    assert_eq!(det.atoms[0].ln_ratio, f64::INFINITY);
}

#[test]
fn anchor_invariance_and_concordance() {
    let s = RngStream::new(46, 0);
    let grid: Vec<f64> = (1..=10).map(|k| k as f64).collect();
    let (a, b) = (neveu_renormalizer((-1f64).exp()), neveu_renormalizer(0.5));
    let (mut big, mut flagged) = (0, 0);
    for i in 0..100 {
        let fr = flow_neveu(1.0, 1.0, 1e-3, &grid, &mut s.child(i).rng()).unwrap();
        let da = detect_super_individuals(&fr, &a, &SuperCriterion::default());
        let db = detect_super_individuals(&fr, &b, &SuperCriterion::default());
        assert_eq!(da.record_jump_xs, db.record_jump_xs);
        for v in da.atoms.iter().filter(|v| v.is_record && v.ln_gap > 2f64.ln()) {
            big += 1;
            flagged += v.is_super as usize;
        }
    }
    assert!(big > 0);
    assert!(flagged as f64 >= 0.95 * big as f64, "{flagged}/{big}");
}

proptest! {
    #[test]
    fn records_are_monotone(marks in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 0..40)) {
        let atoms: Vec<Atom> = marks.iter().map(|(x, z)| Atom { x: *x, z: *z }).collect();
        let r = records_from_marks(&atoms, 1.0, f64::NEG_INFINITY);
        prop_assert!(r.is_monotone());
        for a in &atoms {
            prop_assert!(r.value(a.x) >= a.z);
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=100 {
            let v = r.value(k as f64 / 100.0);
            prop_assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn merge_is_pointwise_max(
        m1 in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 0..20),
        m2 in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 0..20),
        probe in 0.0f64..1.0,
    ) {
        let to = |m: &[(f64, f64)]| m.iter().map(|(x, z)| Atom { x: *x, z: *z }).collect::<Vec<_>>();
        let a = records_from_marks(&to(&m1), 1.0, -10.0);
        let b = records_from_marks(&to(&m2), 1.0, -10.0);
        let c = max_merge(&a, &b).unwrap();
        prop_assert_eq!(c.value(probe), a.value(probe).max(b.value(probe)));
        prop_assert!(c.jumps.iter().all(|j| a.jumps.contains(j) || b.jumps.contains(j)));
    }

    #[test]
    fn fdd_is_monotone_in_levels(z1 in 0.1f64..5.0, z2 in 0.1f64..5.0, bump in 0.0f64..2.0) {
        let f = Law::Gumbel;
        let p = fdd_probability(&f, &[1.0, 2.0], &[z1, z2]).unwrap();
        let q = fdd_probability(&f, &[1.0, 2.0], &[z1 + bump, z2]).unwrap();
        prop_assert!(q >= p);
    }
}
