use std::f64::consts::PI;

use levelset::critical::{
    certify_window, euler_characteristic, find_critical_points, gradient_norm, morse_index,
    CriticalSearchConfig,
};
use levelset::model::wrap_angle;
use levelset::PotentialModel;
use nalgebra::{DVector, SymmetricEigen};

fn search_cfg(seeds: usize) -> CriticalSearchConfig {
    CriticalSearchConfig {
        random_seeds: seeds,
        seed: 21,
        ..Default::default()
    }
}

fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| wrap_angle(x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Local minima of ‖∇V‖² on a 400² grid over the torus, for the two-site
/// fixed-end rotator chain V = (1 − cos a) + (1 − cos(b − a)) + (1 − cos b).
fn grid_scan_pair() -> Vec<[f64; 2]> {
    let m = 400usize;
    let dx = 2.0 * PI / m as f64;
    let x = |i: usize| -PI + i as f64 * dx;
    let g2 = |i: usize, j: usize| {
        let (a, b) = (x(i % m), x(j % m));
        let ga = a.sin() - (b - a).sin();
        let gb = (b - a).sin() + b.sin();
        ga * ga + gb * gb
    };
    let mut minima: Vec<[f64; 2]> = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let c = g2(i, j);
            let lower = (0..3).all(|di| {
                (0..3).all(|dj| (di == 1 && dj == 1) || c <= g2(i + m + di - 1, j + m + dj - 1))
            });
            if lower && c < 5e-3 {
                let p = [x(i), x(j)];
                if minima.iter().all(|q| torus_distance(q, &p) > 0.2) {
                    minima.push(p);
                }
            }
        }
    }
    minima
}

#[test]
fn rotator_pair_matches_grid_scan() {
    let m = PotentialModel::coupled_rotators(2);
    let found = find_critical_points(&m, None, &search_cfg(4_000)).unwrap();
    let grid = grid_scan_pair();
    let dx = 2.0 * PI / 400.0;
    assert_eq!(found.points.len(), grid.len(), "grid minima {grid:?}");
    for p in &found.points {
        assert!(grid.iter().any(|g| torus_distance(g, &p.q) < 5.0 * dx), "{:?} missing from grid scan", p.q);
    }
    assert!(found.points.iter().any(|p| p.v_c.abs() < 1e-12 && p.morse_index == 0));
    assert!(found
        .points
        .iter()
        .any(|p| torus_distance(&p.q, &[PI, PI]) < 1e-8 && (p.v_c - 4.0).abs() < 1e-9));
}

#[test]
fn rotator_pair_indexes_match_hand_built_hessians() {
    let m = PotentialModel::coupled_rotators(2);
    let found = find_critical_points(&m, None, &search_cfg(2_000)).unwrap();
    let mut euler = 0i64;
    for p in &found.points {
        let (a, b) = (p.q[0], p.q[1]);
        let (c1, c2, c3) = (a.cos(), (b - a).cos(), b.cos());
        let h = nalgebra::Matrix2::new(c1 + c2, -c2, -c2, c2 + c3);
        let eig = SymmetricEigen::new(h).eigenvalues;
        let negatives = eig.iter().filter(|l| **l < 0.0).count();
        assert_eq!(p.morse_index, negatives, "at {:?}", p.q);
        if p.v_c < 5.0 {
            euler += if negatives % 2 == 0 { 1 } else { -1 };
        }
    }
    assert_eq!(euler_characteristic(&found.points, 5.0).unwrap(), euler);
}

/// Plain Newton on the dense Hessian from a perturbed start.
fn newton(m: &PotentialModel, mut q: Vec<f64>) -> Vec<f64> {
    for _ in 0..50 {
        let g = DVector::from_vec(m.gradient(&q).unwrap());
        if g.norm() < 1e-13 {
            break;
        }
        let h = m.hessian(&q).unwrap().to_dense();
        let step = h.lu().solve(&g).expect("nonsingular Hessian near a Morse point");
        for (x, s) in q.iter_mut().zip(step.iter()) {
            *x -= s;
        }
    }
    q
}

#[test]
fn reported_points_are_critical_and_basin_stable() {
    for m in [PotentialModel::coupled_rotators(4), PotentialModel::phi4(3, -1.0, 1.0)] {
        let found = find_critical_points(&m, None, &search_cfg(2_000)).unwrap();
        assert!(!found.points.is_empty());
        for p in found.points.iter().filter(|p| !p.degenerate) {
            assert!(gradient_norm(&m, &p.q).unwrap() < 1e-9);
            let start: Vec<f64> = p.q.iter().enumerate().map(|(i, x)| x + 1e-3 * (i as f64 - 1.3)).collect();
            let back = newton(&m, start);
            let dist: f64 = back.iter().zip(p.q.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dist < 1e-8, "{:?} drifted by {dist}", p.q);
            let mi = morse_index(&m, &p.q, 1e-8).unwrap();
            assert_eq!(mi.index, p.morse_index);
        }
    }
}

#[test]
fn fpu_chain_has_a_single_minimum() {
    let m = PotentialModel::fpu(6, 0.1);
    let found = find_critical_points(&m, None, &search_cfg(10_000)).unwrap();
    assert_eq!(found.points.len(), 1);
    let p = &found.points[0];
    assert!(p.q.iter().all(|x| x.abs() < 1e-9));
    assert_eq!(p.morse_index, 0);
    // convexity: the Hessian is positive definite at random points, so no
    // other stationary point exists
    let mut state = 7u64;
    for _ in 0..100 {
        let q: Vec<f64> = (0..6)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 6.0
            })
            .collect();
        let h = m.hessian(&q).unwrap().to_dense();
        assert!(SymmetricEigen::new(h).eigenvalues.min() > 0.0);
    }
}

#[test]
fn euler_characteristic_steps_by_signed_counts() {
    let m = PotentialModel::coupled_rotators(4);
    let found = find_critical_points(&m, None, &search_cfg(3_000)).unwrap();
    let mut levels: Vec<f64> = found.points.iter().map(|p| p.v_c).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-7);
    let mut previous = 0i64;
    let mut below = -1.0;
    for &v in levels.iter().filter(|&&v| v < 5.0) {
        let at = |x: f64| euler_characteristic(&found.points, x).unwrap();
        assert_eq!(at(0.5 * (below + v)), previous);
        let jump: i64 = found
            .points
            .iter()
            .filter(|p| (p.v_c - v).abs() < 1e-7)
            .map(|p| p.multiplicity as i64 * if p.morse_index % 2 == 0 { 1 } else { -1 })
            .sum();
        previous += jump;
        assert_eq!(at(v + 1e-6), previous);
        below = v;
    }
}

#[test]
fn harmonic_window_is_one_certified_piece() {
    let m = PotentialModel::harmonic(3);
    let found = find_critical_points(&m, None, &search_cfg(200)).unwrap();
    let shell = levelset::sampler::ShellSamplerConfig {
        n_steps: 3_000,
        burn_in: 500,
        n_chains: 2,
        ..Default::default()
    };
    let r = certify_window(&m, (0.1, 1.0), &found, Some(&shell)).unwrap();
    assert_eq!(r.subintervals.len(), 1);
    let s = &r.subintervals[0];
    // ‖∇V‖ = √(2v) on Σ_v, smallest at the lowest sampled level v̄ = 0.25
    let c = s.c_est.unwrap();
    assert!(c > 0.0 && c <= (2.0 * 3.0 * 0.25f64).sqrt() * 1.001 + 1e-3, "C = {c}");
    assert_eq!(s.near_critical_events, 0);
    assert_eq!(s.euler, Some(1));
}

/// Bond differences q_i − q_{i−1} with both fixed ends at 0.
fn bonds(q: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    let mut out: Vec<f64> = q
        .iter()
        .map(|&x| {
            let d = wrap_angle(x - prev);
            prev = x;
            d
        })
        .collect();
    out.push(wrap_angle(-prev));
    out
}

fn in_family(q: &[f64]) -> bool {
    bonds(q).iter().all(|d| d.abs() < 1e-6 || (d.abs() - PI).abs() < 1e-6)
}

#[test]
#[ignore = "the five-site chain also has twisted critical points off the {0, π} family, so the found set is larger"]
fn rotator_quintet_critical_set_is_the_structured_family() {
    let m = PotentialModel::coupled_rotators(5);
    let found = find_critical_points(&m, None, &search_cfg(10_000)).unwrap();
    assert_eq!(found.points.len(), 32);
    for p in &found.points {
        assert!(in_family(&p.q));
        let pi_bonds = bonds(&p.q).iter().filter(|d| d.abs() > 1.0).count();
        assert!((p.v_c - 2.0 * pi_bonds as f64).abs() < 1e-9);
    }
}

#[test]
fn rotator_quintet_twisted_points_are_genuine() {
    let m = PotentialModel::coupled_rotators(5);
    let found = find_critical_points(&m, None, &search_cfg(10_000)).unwrap();
    let family = found.points.iter().filter(|p| in_family(&p.q)).count();
    assert_eq!(family, 32);
    let twisted: Vec<_> = found.points.iter().filter(|p| !in_family(&p.q)).collect();
    assert!(!twisted.is_empty());
    for p in twisted {
        assert!(gradient_norm(&m, &p.q).unwrap() < 1e-9);
        // equal sines across bonds: sin d_i is the same for every bond
        let s: Vec<f64> = bonds(&p.q).iter().map(|d| d.sin()).collect();
        assert!(s.iter().all(|x| (x - s[0]).abs() < 1e-8), "{s:?}");
        assert!(s[0].abs() > 1e-6);
    }
}
