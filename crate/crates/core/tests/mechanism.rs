use csbp_core::mechanism::{Criticality, Density, Finiteness, Kind, LevyTriple, Mechanism};
use csbp_core::Error;
use proptest::prelude::*;

fn closed_kinds() -> Vec<Kind> {
    vec![
        Kind::Neveu,
        Kind::LogShift,
        Kind::FellerLogistic,
        Kind::StableExplosive { alpha: 0.5 },
        Kind::StableExplosive { alpha: 0.3 },
        Kind::StableSubcritical { alpha: 1.0 },
        Kind::StableSubcritical { alpha: 0.5 },
        Kind::StableSubcritical { alpha: 0.8 },
        Kind::FiniteVarDelta { d: 2.0 },
    ]
}

#[test]
fn neveu_values() {
    let m = Mechanism::neveu();
    assert_eq!(m.psi(1.0).unwrap(), 0.0);
    assert!((m.psi(std::f64::consts::E).unwrap() - std::f64::consts::E).abs() < 1e-15);
}

#[test]
fn neveu_triple_by_quadrature() {
    let t = Mechanism::neveu().levy_triple().unwrap();
    let m = Mechanism::triple(LevyTriple::new(t.sigma, t.gamma, Density::Power { c: 1.0, p: 2.0 })).unwrap();
    let v = m.psi(2.0).unwrap();
    assert!((v - 2.0 * 2f64.ln()).abs() < 1e-10, "{v}");
}

#[test]
fn closed_forms_match_their_triples() {
    for kind in closed_kinds() {
        let closed = Mechanism::closed(kind).unwrap();
        let Some(t) = closed.levy_triple() else { continue };
        let tri = Mechanism::triple(t).unwrap();
        for k in 0..=48 {
            let u = 10f64.powf(-6.0 + 0.25 * k as f64);
            let a = closed.psi(u).unwrap();
            let b = tri.psi(u).unwrap();
            // Ψ has roots (Neveu at u = 1); measure there against the size of its terms
            let scale = a.abs().max(1e-6 * u);
            assert!((a - b).abs() <= 1e-8 * scale, "{kind:?} u={u}: {a} vs {b}");
        }
    }
}

#[test]
fn classification_examples() {
    let n = Mechanism::neveu().classify();
    assert_eq!(n.criticality, Criticality::Supercritical);
    assert_eq!(n.mean, Finiteness::Infinite);
    assert_eq!(n.variation, Finiteness::Infinite);
    assert_eq!(n.persistent.value, Some(true));
    assert_eq!(n.non_explosive.value, Some(true));
    assert_eq!(n.rho, 1.0);

    let s = Mechanism::stable_subcritical(1.0).unwrap().classify();
    assert_eq!(s.criticality, Criticality::Critical);
    assert_eq!(s.mean, Finiteness::Finite);
    assert_eq!(s.variation, Finiteness::Infinite);
    assert_eq!(s.persistent.value, Some(false));
    assert_eq!(s.non_explosive.value, Some(true));

    let e = Mechanism::stable_explosive(0.5).unwrap().classify();
    assert_eq!(e.criticality, Criticality::Supercritical);
    assert_eq!(e.non_explosive.value, Some(false));
}

#[test]
fn triple_classification_agrees_with_closed_forms() {
    for kind in closed_kinds() {
        let closed = Mechanism::closed(kind).unwrap();
        let Some(t) = closed.levy_triple() else { continue };
        let a = closed.classify();
        let b = Mechanism::triple(t).unwrap().classify();
        assert_eq!(a.criticality, b.criticality, "{kind:?}");
        assert_eq!(a.mean, b.mean, "{kind:?}");
        assert_eq!(a.variation, b.variation, "{kind:?}");
        if let Some(p) = b.persistent.value {
            assert_eq!(a.persistent.value, Some(p), "{kind:?}");
        }
        if let Some(p) = b.non_explosive.value {
            assert_eq!(a.non_explosive.value, Some(p), "{kind:?}");
        }
        if a.rho.is_finite() {
            assert!((a.rho - b.rho).abs() <= 1e-10 * (1.0 + a.rho), "{kind:?}: {} vs {}", a.rho, b.rho);
        } else {
            assert_eq!(b.rho, f64::INFINITY, "{kind:?}");
        }
    }
}

#[test]
fn finite_var_delta_root() {
    // d u = 1 − e^{−u} at u = ρ
    let c = Mechanism::finite_var_delta(0.5).unwrap().classify();
    assert!((0.5 * c.rho - (1.0 - (-c.rho).exp())).abs() < 1e-12);
    assert!(c.rho > 1.5 && c.rho < 1.6);
    assert_eq!(Mechanism::finite_var_delta(2.0).unwrap().classify().rho, 0.0);
}

#[test]
fn invalid_parameters() {
    assert!(matches!(Mechanism::stable_explosive(1.5), Err(Error::Validation { .. })));
    assert!(matches!(Mechanism::stable_subcritical(0.0), Err(Error::Validation { .. })));
    assert!(matches!(Mechanism::finite_var_delta(-1.0), Err(Error::Validation { .. })));
    let bad = LevyTriple::new(0.0, 0.0, Density::Power { c: 1.0, p: 3.5 });
    assert!(matches!(Mechanism::triple(bad), Err(Error::NonIntegrableLevyMeasure(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn psi_is_convex(ku in 0usize..9, l1 in -6.0f64..6.0, l2 in -6.0f64..6.0, s in 0.01f64..0.99) {
        let m = Mechanism::closed(closed_kinds()[ku]).unwrap();
        let (u1, u2) = (10f64.powf(l1.min(l2)), 10f64.powf(l1.max(l2)));
        prop_assume!(u2 > u1);
        let mid = m.psi(s * u1 + (1.0 - s) * u2).unwrap();
        let chord = s * m.psi(u1).unwrap() + (1.0 - s) * m.psi(u2).unwrap();
        prop_assert!(mid <= chord + 1e-9 * (1.0 + m.psi(u2).unwrap().abs()));
    }
}
