//! Property tests for invariants that must hold over random inputs.

use levelset::cli::{emit_config, parse_config};
use levelset::entropy::legendre;
use levelset::geometry::{integrand_suite, GeometryOptions};
use levelset::moments::MomentAccumulator;
use levelset::{Boundary, LatticeTopology, ModelKind, PotentialModel};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = PotentialModel> {
    prop_oneof![
        (2usize..7).prop_map(PotentialModel::harmonic),
        (2usize..7).prop_map(PotentialModel::coupled_rotators),
        (2usize..7, 0.0f64..1.0).prop_map(|(n, l)| PotentialModel::fpu(n, l)),
        (2usize..7, -2.0f64..2.0, 0.1f64..2.0).prop_map(|(n, r, u)| PotentialModel::phi4(n, r, u)),
        (2usize..4, -1.0f64..1.0, 0.1f64..1.0).prop_map(|(side, r, u)| PotentialModel::new(
            LatticeTopology::new(2, side, Boundary::Fixed).unwrap(),
            ModelKind::Phi4 { r, u }
        )
        .unwrap()),
        (3usize..7).prop_map(|n| PotentialModel::new(
            LatticeTopology::chain(n, Boundary::Periodic).unwrap(),
            ModelKind::CoupledRotators
        )
        .unwrap()),
    ]
}

fn model_and_point() -> impl Strategy<Value = (PotentialModel, Vec<f64>)> {
    model_strategy().prop_flat_map(|m| {
        let n = m.n();
        (Just(m), prop::collection::vec(-2.0f64..2.0, n))
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivatives_agree_with_differences((m, q) in model_and_point()) {
        let n = m.n();
        let h = 1e-5;
        let g = m.gradient(&q).unwrap();
        let hess = m.hessian(&q).unwrap();
        for i in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let fd = (m.evaluate(&qp).unwrap() - m.evaluate(&qm).unwrap()) / (2.0 * h);
            prop_assert!(close(g[i], fd, 1e-5), "grad {i}: {} vs {fd}", g[i]);
            let gp = m.gradient(&qp).unwrap();
            let gm = m.gradient(&qm).unwrap();
            let hp = m.hessian(&qp).unwrap();
            let hm = m.hessian(&qm).unwrap();
            for j in 0..n {
                let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                prop_assert!(close(hess.get(i, j), fd2, 1e-5));
                for k in 0..n {
                    let fd3 = (hp.get(j, k) - hm.get(j, k)) / (2.0 * h);
                    prop_assert!(close(m.third_partial(&q, i, j, k).unwrap(), fd3, 1e-5));
                }
            }
        }
    }

    #[test]
    fn hessian_vanishes_off_stencil((m, q) in model_and_point()) {
        let hess = m.hessian(&q).unwrap();
        let topo = m.topology();
        for i in 0..m.n() {
            for j in 0..m.n() {
                if i != j && !topo.are_neighbors(i, j) {
                    prop_assert_eq!(hess.get(i, j), 0.0);
                }
                prop_assert_eq!(hess.get(i, j), hess.get(j, i));
            }
        }
    }

    #[test]
    fn energy_respects_stability_bound((m, q) in model_and_point()) {
        let b = m.stability_bound().unwrap();
        prop_assert!(m.evaluate(&q).unwrap() >= -(m.n() as f64) * b - 1e-12);
    }

    #[test]
    fn rotator_junction_bounds_additivity(
        a in prop::collection::vec(-3.2f64..3.2, 4),
        b in prop::collection::vec(-3.2f64..3.2, 5),
    ) {
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        let gap = PotentialModel::coupled_rotators(9).evaluate(&joined).unwrap()
            - PotentialModel::coupled_rotators(4).evaluate(&a).unwrap()
            - PotentialModel::coupled_rotators(5).evaluate(&b).unwrap();
        prop_assert!(gap <= 2.0 + 1e-12);
    }

    #[test]
    fn harmonic_integrands_follow_radius(n in 3usize..9, q in prop::collection::vec(-2.0f64..2.0, 8)) {
        let m = PotentialModel::harmonic(n);
        let q = &q[..n];
        let v: f64 = 0.5 * q.iter().map(|x| x * x).sum::<f64>();
        prop_assume!(v > 0.05);
        let g = integrand_suite(&m, q, 2, &GeometryOptions::default()).unwrap();
        let c = n as f64 / 2.0 - 1.0;
        prop_assert!(close(g.alpha, c / v, 1e-10));
        prop_assert!(close(g.p.unwrap(), -c / (v * v), 1e-8));
    }

    #[test]
    fn merged_moments_are_consistent(x in prop::collection::vec(-5.0f64..5.0, 2..200), cut in 0usize..200) {
        let cut = cut.min(x.len());
        let mut a = MomentAccumulator::default();
        let mut b = MomentAccumulator::default();
        x[..cut].iter().for_each(|v| a.push(*v));
        x[cut..].iter().for_each(|v| b.push(*v));
        let (m2, _, m4) = a.merge(&b).central();
        prop_assert!(m2 >= -1e-12);
        prop_assert!(m4 + 1e-9 >= m2 * m2);
        let mut whole = MomentAccumulator::default();
        x.iter().for_each(|v| whole.push(*v));
        let (w2, w3, w4) = whole.central();
        let (a2, a3, a4) = a.merge(&b).central();
        prop_assert!(close(w2, a2, 1e-10) && close(w3, a3, 1e-10) && close(w4, a4, 1e-10));
    }

    #[test]
    fn double_conjugation_recovers_concave_entropy(
        a in 0.1f64..3.0, b in -1.0f64..1.0, c in 0.0f64..1.0, npts in 20usize..80,
    ) {
        // concave: a log v + b v − c v²
        let vbar: Vec<f64> = (0..npts).map(|i| 0.2 + 2.0 * i as f64 / (npts - 1) as f64).collect();
        let s: Vec<f64> = vbar.iter().map(|v| a * v.ln() + b * v - c * v * v).collect();
        let t = legendre(&vbar, &s).unwrap();
        prop_assert!(t.concave);
        for (v, sv) in vbar.iter().zip(&s) {
            prop_assert!((t.inverse(*v) - sv).abs() < 1e-6);
        }
    }

    #[test]
    fn config_emission_is_idempotent(seed in any::<u64>(), n in 1usize..10, eps in 1e-6f64..1.0, steps in 2001usize..100_000) {
        let text = format!(
            "experiment = \"entropy-derivs\"\nseed = {seed}\n[model]\nkind = \"coupled-rotators\"\nn = {n}\n\
             [sampler]\nepsilon = {eps:e}\nn_steps = {steps}\n[entropy]\nvbar = [0.25, 0.5]\n"
        );
        let cfg = parse_config(&text).unwrap();
        let again = parse_config(&emit_config(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
