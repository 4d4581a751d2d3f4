use levelset::sampler::{sample_level_set, surface_average, ShellSamplerConfig};
use levelset::PotentialModel;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::f64::consts::PI;

/// ⟨f⟩ over dσ/‖∇V‖ on Σ_v for a 2-D model, by a Gaussian-smoothed delta on
/// a dense grid. One entry per observable.
fn grid_average_2d(m: &PotentialModel, v: f64, fs: &[fn(f64, f64) -> f64]) -> Vec<f64> {
    let n = 4000;
    let h = 0.004;
    let mut num = vec![0.0; fs.len()];
    let mut den = 0.0;
    for i in 0..n {
        let a = -PI + (i as f64 + 0.5) * 2.0 * PI / n as f64;
        for j in 0..n {
            let b = -PI + (j as f64 + 0.5) * 2.0 * PI / n as f64;
            let e = m.evaluate(&[a, b]).unwrap() - v;
            let w = (-0.5 * e * e / (h * h)).exp();
            if w > 1e-300 {
                for (acc, f) in num.iter_mut().zip(fs) {
                    *acc += w * f(a, b);
                }
                den += w;
            }
        }
    }
    num.into_iter().map(|x| x / den).collect()
}

fn rotator_pair_run(v: f64) -> levelset::sampler::SampleSet {
    let cfg = ShellSamplerConfig {
        n_steps: 80_000,
        burn_in: 4_000,
        n_chains: 4,
        seed: 3,
        ..ShellSamplerConfig::new(v)
    };
    sample_level_set(&PotentialModel::coupled_rotators(2), &cfg).unwrap()
}

#[test]
fn rotator_pair_matches_grid_quadrature() {
    let m = PotentialModel::coupled_rotators(2);
    let observables: [(&str, fn(f64, f64) -> f64); 5] = [
        ("cos(q2-q1)", |a, b| (b - a).cos()),
        ("cos q1", |a, _| a.cos()),
        ("q1^2", |a, _| a * a),
        ("q1 q2", |a, b| a * b),
        ("sin q1 sin q2 + q2^4", |a, b| a.sin() * b.sin() + b.powi(4)),
    ];
    let fs: Vec<fn(f64, f64) -> f64> = observables.iter().map(|o| o.1).collect();
    for v in [0.5, 2.0] {
        let set = rotator_pair_run(v);
        let oracles = grid_average_2d(&m, v, &fs);
        for ((name, f), oracle) in observables.into_iter().zip(oracles) {
            let est = surface_average(&set, |s| f(s.point.config[0], s.point.config[1]));
            assert!(!est.low_confidence);
            assert!(
                (est.mean - oracle).abs() < 3.0 * est.stderr + 2e-4,
                "v = {v}, {name}: {est:?} vs {oracle}"
            );
        }
    }
}

#[test]
fn polar_quadrature_confirms_grid_oracle() {
    // Σ_v as a polar graph r(φ): ⟨f⟩ ∝ ∫ f · r/∂_rV dφ.
    let m = PotentialModel::coupled_rotators(2);
    let v = 0.5;
    let n = 20_000;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        let phi = (k as f64 + 0.5) * 2.0 * PI / n as f64;
        let (c, s) = (phi.cos(), phi.sin());
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if m.evaluate(&[mid * c, mid * s]).unwrap() < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = 0.5 * (lo + hi);
        let g = m.gradient(&[r * c, r * s]).unwrap();
        let w = r / (g[0] * c + g[1] * s);
        num += w * (r * s - r * c).cos();
        den += w;
    }
    let grid = grid_average_2d(&m, v, &[|a, b| (b - a).cos()])[0];
    assert!((num / den - grid).abs() < 1e-4);
}

#[test]
fn transitions_are_reversible() {
    // forward and backward transition counts between angular sectors of the
    // level curve agree (χ² test at 1%)
    let set = rotator_pair_run(0.5);
    let bins = 8;
    let sector = |a: f64, b: f64| {
        let t = b.atan2(a) + PI;
        ((t / (2.0 * PI) * bins as f64) as usize).min(bins - 1)
    };
    let mut counts = vec![vec![0usize; bins]; bins];
    for pair in set.samples.windows(2) {
        if pair[0].chain != pair[1].chain {
            continue;
        }
        let i = sector(pair[0].point.config[0], pair[0].point.config[1]);
        let j = sector(pair[1].point.config[0], pair[1].point.config[1]);
        counts[i][j] += 1;
    }
    let mut stat = 0.0;
    let mut dof = 0;
    for i in 0..bins {
        for j in i + 1..bins {
            let total = counts[i][j] + counts[j][i];
            if total >= 10 {
                let d = counts[i][j] as f64 - counts[j][i] as f64;
                stat += d * d / total as f64;
                dof += 1;
            }
        }
    }
    assert!(dof >= 5, "too few populated sector pairs");
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 = {stat} on {dof} dof, p = {p}");
}
