//! Critical points, Morse indexes and critical-free windows.
//!
//! Points are located by Levenberg–Marquardt on ‖∇V‖² from structured and
//! random seeds; completeness is evidential and every report carries the
//! seed counts behind it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{norm, wrap_angle, Configuration, ModelKind, PotentialModel};
use crate::sampler::{sample_level_set, ShellSamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticalSearchConfig {
    pub random_seeds: usize,
    pub seed: u64,
    /// Include the structured seeds (rotators: bond differences in {0, π}).
    pub structured: bool,
    /// Gradient norm accepted as critical.
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Merge distance; defaults to 1e−5·√N.
    pub dedup_tol: Option<f64>,
    /// Eigenvalues below this fraction of the spectral radius count as zero.
    pub degeneracy_rel_tol: f64,
}

impl Default for CriticalSearchConfig {
    fn default() -> Self {
        Self {
            random_seeds: 10_000,
            seed: 0,
            structured: true,
            newton_tol: 1e-9,
            max_iter: 200,
            dedup_tol: None,
            degeneracy_rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseIndex {
    pub index: usize,
    /// Ascending Hessian eigenvalues.
    pub spectrum: Vec<f64>,
    pub min_abs_eigenvalue: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub q: Configuration,
    pub v_c: f64,
    pub vbar_c: f64,
    pub grad_norm: f64,
    pub morse_index: usize,
    pub spectrum: Vec<f64>,
    pub min_abs_eigenvalue: f64,
    pub degenerate: bool,
    /// Distinct converged points merged into this entry. Above 1 only for
    /// degenerate critical manifolds, which are reported once per level.
    pub multiplicity: usize,
    /// Member of the structured seed family (rotators: bond differences in
    /// {0, π}).
    pub structured_family: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSearch {
    pub points: Vec<CriticalPoint>,
    pub structured_seeds: usize,
    pub random_seeds: usize,
    pub converged: usize,
    pub diverged: usize,
    /// A point outside the structured family was found.
    pub unknown_family_found: bool,
}

/// Hessian eigen-decomposition at q. Periodic rotators are reduced by fixing
/// q_1 = 0, which removes the uniform-shift zero mode.
pub fn morse_index(model: &PotentialModel, q: &[f64], degeneracy_rel_tol: f64) -> Result<MorseIndex> {
    let h = reduced_hessian(model, q)?;
    let eig = SymmetricEigen::new(h);
    let mut spectrum: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    spectrum.sort_by(|a, b| a.total_cmp(b));
    let radius = spectrum.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = degeneracy_rel_tol * radius.max(f64::MIN_POSITIVE);
    let min_abs = spectrum.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    Ok(MorseIndex {
        index: spectrum.iter().filter(|&&x| x < -tol).count(),
        degenerate: radius == 0.0 || min_abs <= tol,
        min_abs_eigenvalue: min_abs,
        spectrum,
    })
}

fn reduced_hessian(model: &PotentialModel, q: &[f64]) -> Result<DMatrix<f64>> {
    let h = model.hessian(q)?.to_dense();
    if model.has_shift_zero_mode() {
        let n = h.nrows();
        Ok(h.view((1, 1), (n - 1, n - 1)).into_owned())
    } else {
        Ok(h)
    }
}

/// Levenberg–Marquardt on ‖∇V‖². Returns the end point and its gradient norm.
fn polish(model: &PotentialModel, start: &[f64], cfg: &CriticalSearchConfig) -> (Vec<f64>, f64) {
    let reduce = model.has_shift_zero_mode();
    let offset = reduce as usize;
    let mut q = start.to_vec();
    if reduce {
        q[0] = 0.0;
    }
    let grad_of = |q: &[f64]| -> DVector<f64> {
        let g = model.gradient(q).expect("dimension checked");
        DVector::from_column_slice(&g[offset..])
    };
    let mut g = grad_of(&q);
    let mut gn = g.norm();
    let mut mu = 1e-3;
    for _ in 0..cfg.max_iter {
        if gn < 1e-13 {
            break;
        }
        let h = reduced_hessian(model, &q).expect("dimension checked");
        let scale = h.norm().max(1e-300);
        let hth = &h * &h;
        let rhs = -(&h * &g);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = hth.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * scale * scale;
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&rhs);
            let mut trial = q.clone();
            for (i, s) in step.iter().enumerate() {
                trial[i + offset] += s;
            }
            model.normalize(&mut trial);
            let gt = grad_of(&trial);
            let gtn = gt.norm();
            if gtn < gn {
                q = trial;
                g = gt;
                gn = gtn;
                mu = (mu / 5.0).max(1e-15);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (q, gn)
}

fn rotator_family_member(model: &PotentialModel, q: &[f64]) -> bool {
    let topo = model.topology();
    let on_family = |d: f64| {
        let d = wrap_angle(d).abs();
        d < 1e-6 || (std::f64::consts::PI - d) < 1e-6
    };
    topo.bonds().iter().all(|&(i, j)| on_family(q[j] - q[i])) && topo.walls().iter().all(|&i| on_family(q[i]))
}

fn structured_seeds(model: &PotentialModel) -> Vec<Vec<f64>> {
    let n = model.n();
    match model.kind() {
        ModelKind::CoupledRotators if n <= 12 => {
            // every site at 0 or π; periodic chains pin site 0
            let free = if model.has_shift_zero_mode() { n - 1 } else { n };
            (0..1usize << free)
                .map(|mask| {
                    let mut q = vec![0.0; n];
                    for b in 0..free {
                        if mask >> b & 1 == 1 {
                            q[n - free + b] = std::f64::consts::PI;
                        }
                    }
                    q
                })
                .collect()
        }
        _ => vec![vec![0.0; n]],
    }
}

fn random_seed_point(model: &PotentialModel, rng: &mut impl Rng) -> Vec<f64> {
    let n = model.n();
    if model.is_angular() {
        (0..n).map(|_| std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0)).collect()
    } else {
        let scale = match model.kind() {
            ModelKind::Phi4 { r, u } if r < 0.0 => 2.0 * (-r / u).sqrt(),
            _ => 2.0,
        };
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

fn distance(model: &PotentialModel, a: &[f64], b: &[f64]) -> f64 {
    let angular = model.is_angular();
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = if angular { wrap_angle(x - y) } else { x - y };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Locate critical points with v̄_c in `window` (all, if None).
pub fn find_critical_points(
    model: &PotentialModel,
    window: Option<(f64, f64)>,
    cfg: &CriticalSearchConfig,
) -> Result<CriticalSearch> {
    if !(cfg.newton_tol > 0.0) {
        return Err(invalid("newton_tol", "must be > 0"));
    }
    if matches!(model.kind(), ModelKind::Linear { .. }) {
        return Err(invalid("model", "linear test potential has no critical points"));
    }
    let n = model.n();
    let dedup_tol = cfg.dedup_tol.unwrap_or(1e-5 * (n as f64).sqrt());
    let structured = if cfg.structured {
        structured_seeds(model)
    } else {
        Vec::new()
    };
    const BATCH: usize = 256;
    let batches = cfg.random_seeds.div_ceil(BATCH);
    let mut candidates: Vec<(Vec<f64>, f64)> = structured
        .par_iter()
        .map(|s| polish(model, s, cfg))
        .collect();
    let random: Vec<Vec<(Vec<f64>, f64)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = crate::rng::stream(crate::rng::derive_seed(cfg.seed, 0xC417), b as u64);
            let count = ((b + 1) * BATCH).min(cfg.random_seeds) - b * BATCH;
            (0..count)
                .map(|_| polish(model, &random_seed_point(model, &mut rng), cfg))
                .collect()
        })
        .collect();
    candidates.extend(random.into_iter().flatten());

    let total = candidates.len();
    let mut converged: Vec<(Vec<f64>, f64, f64)> = candidates
        .into_iter()
        .filter(|(_, gn)| *gn < cfg.newton_tol)
        .map(|(q, gn)| {
            let v = model.evaluate_unchecked(&q);
            (q, gn, v)
        })
        .collect();
    let n_converged = converged.len();
    converged.sort_by(|a, b| {
        a.2.total_cmp(&b.2).then_with(|| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let mut points: Vec<CriticalPoint> = Vec::new();
    for (q, gn, v) in converged {
        if points.iter().any(|p| distance(model, &p.q, &q) < dedup_tol) {
            continue;
        }
        let morse = morse_index(model, &q, cfg.degeneracy_rel_tol)?;
        if morse.degenerate {
            let same_level = points.iter_mut().find(|p| {
                p.degenerate && (p.v_c - v).abs() < 1e-7 * v.abs().max(1.0) && p.morse_index == morse.index
            });
            if let Some(p) = same_level {
                p.multiplicity += 1;
                continue;
            }
        }
        points.push(CriticalPoint {
            structured_family: model.is_angular() && rotator_family_member(model, &q),
            q: Configuration(q),
            v_c: v,
            vbar_c: v / n as f64,
            grad_norm: gn,
            morse_index: morse.index,
            min_abs_eigenvalue: morse.min_abs_eigenvalue,
            degenerate: morse.degenerate,
            spectrum: morse.spectrum,
            multiplicity: 1,
        });
    }
    if let Some((lo, hi)) = window {
        points.retain(|p| p.vbar_c >= lo - 1e-12 && p.vbar_c <= hi + 1e-12);
    }
    let unknown_family_found = model.is_angular() && points.iter().any(|p| !p.structured_family);
    Ok(CriticalSearch {
        points,
        structured_seeds: structured.len(),
        random_seeds: cfg.random_seeds,
        converged: n_converged,
        diverged: total - n_converged,
        unknown_family_found,
    })
}

/// χ(M_v) = Σ_{v_c ≤ v} (−1)^k by Morse counting.
pub fn euler_characteristic(points: &[CriticalPoint], v: f64) -> Result<i64> {
    let mut chi = 0i64;
    for p in points.iter().filter(|p| p.v_c <= v) {
        if p.degenerate {
            return Err(Error::DegenerateCritical { v_c: p.v_c });
        }
        let sign = if p.morse_index % 2 == 0 { 1 } else { -1 };
        chi += sign * p.multiplicity as i64;
    }
    Ok(chi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLevel {
    pub vbar_c: f64,
    pub v_c: f64,
    /// Morse index → number of points.
    pub index_histogram: BTreeMap<usize, usize>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subinterval {
    pub lo: f64,
    pub hi: f64,
    /// No critical value strictly inside (modulo search completeness).
    pub certified: bool,
    /// Smallest ‖∇V‖ seen on shells at interior levels.
    pub c_est: Option<f64>,
    /// χ(M_v) for v̄ inside, if no degenerate point lies below.
    pub euler: Option<i64>,
    pub near_critical_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub window: (f64, f64),
    pub levels: Vec<CriticalLevel>,
    pub subintervals: Vec<Subinterval>,
    pub points: Vec<CriticalPoint>,
    pub caveats: Vec<String>,
}

impl TopologyReport {
    /// JSON with coordinates rounded to 1e−10.
    pub fn to_json(&self) -> Result<String> {
        let mut copy = self.clone();
        for p in &mut copy.points {
            for x in p.q.iter_mut() {
                *x = (*x * 1e10).round() / 1e10;
                if *x == 0.0 {
                    *x = 0.0;
                }
            }
        }
        serde_json::to_string_pretty(&copy).map_err(|e| Error::Io(e.to_string()))
    }

    /// The subinterval containing v̄, if any.
    pub fn subinterval_at(&self, vbar: f64) -> Option<&Subinterval> {
        self.subintervals.iter().find(|s| s.lo < vbar && vbar < s.hi)
    }
}

/// Split a v̄ window at the critical values found inside it, and estimate
/// C = min ‖∇V‖ on shells at five interior levels of each piece. Shell
/// sampling is skipped when `shell` is None.
pub fn certify_window(
    model: &PotentialModel,
    window: (f64, f64),
    search: &CriticalSearch,
    shell: Option<&ShellSamplerConfig>,
) -> Result<TopologyReport> {
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(invalid("window", "upper end must exceed lower end"));
    }
    let n = model.n() as f64;
    let mut levels: Vec<CriticalLevel> = Vec::new();
    for p in &search.points {
        let level = match levels.iter_mut().find(|l| (l.v_c - p.v_c).abs() < 1e-7 * p.v_c.abs().max(1.0)) {
            Some(l) => l,
            None => {
                levels.push(CriticalLevel {
                    vbar_c: p.vbar_c,
                    v_c: p.v_c,
                    index_histogram: BTreeMap::new(),
                    degenerate: false,
                });
                levels.last_mut().expect("just pushed")
            }
        };
        *level.index_histogram.entry(p.morse_index).or_default() += p.multiplicity;
        level.degenerate |= p.degenerate;
    }
    levels.sort_by(|a, b| a.v_c.total_cmp(&b.v_c));
    let inside: Vec<f64> = levels
        .iter()
        .map(|l| l.vbar_c)
        .filter(|&x| x > lo && x < hi)
        .collect();
    let mut cuts = vec![lo];
    cuts.extend(&inside);
    cuts.push(hi);
    let mut subintervals = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let euler = euler_characteristic(&search.points, mid * n).ok();
        let (mut c_est, mut events) = (None, 0);
        if let Some(cfg) = shell {
            let mut min_grad = f64::INFINITY;
            for j in 1..=5 {
                let vbar = a + (b - a) * j as f64 / 6.0;
                let c = ShellSamplerConfig {
                    v: vbar * n,
                    seed: crate::rng::derive_seed(cfg.seed, j),
                    ..cfg.clone()
                };
                let set = sample_level_set(model, &c)?;
                events += set.diagnostics.near_critical_events;
                for s in &set.samples {
                    min_grad = min_grad.min(s.point.grad_norm);
                }
            }
            c_est = min_grad.is_finite().then_some(min_grad);
        }
        subintervals.push(Subinterval {
            lo: a,
            hi: b,
            certified: true,
            c_est,
            euler,
            near_critical_events: events,
        });
    }
    let mut caveats = vec![format!(
        "completeness is evidential: {} structured and {} random seeds, {} converged",
        search.structured_seeds, search.random_seeds, search.converged
    )];
    if search.unknown_family_found {
        caveats.push("unknown family found: critical points outside the structured seed family".into());
    }
    if levels.iter().any(|l| l.degenerate) {
        caveats.push("degenerate critical levels present; Euler characteristic undefined above them".into());
    }
    Ok(TopologyReport {
        window,
        levels,
        subintervals,
        points: search.points.clone(),
        caveats,
    })
}

/// One critical level of the fixed-end rotator chain, from the closed-form
/// classification: every bond carries the same sin Δ, so k bonds sit at
/// Δ = a and the rest at π − a, subject to Σ Δ ≡ 0 (mod 2π).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticLevel {
    pub v: f64,
    /// Number of critical points (for isolated ones), index → count.
    pub index_counts: BTreeMap<usize, u128>,
    /// Degenerate points or critical manifolds sit at this level.
    pub degenerate: bool,
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All critical levels of the fixed-end rotator chain with `n` sites.
pub fn rotator_chain_critical_levels(n: usize) -> Vec<AnalyticLevel> {
    use std::f64::consts::PI;
    let bonds = n as i64 + 1;
    let mut found: Vec<AnalyticLevel> = Vec::new();
    let mut add = |v: f64, index: Option<usize>, count: u128| {
        let level = match found.iter_mut().find(|l| (l.v - v).abs() < 1e-9) {
            Some(l) => l,
            None => {
                found.push(AnalyticLevel {
                    v,
                    index_counts: BTreeMap::new(),
                    degenerate: false,
                });
                found.last_mut().expect("just pushed")
            }
        };
        match index {
            Some(i) => *level.index_counts.entry(i).or_default() += count,
            None => level.degenerate = true,
        }
    };
    for k in 0..=bonds {
        let c = 2 * k - bonds;
        let rest = bonds - k;
        if c == 0 {
            if rest % 2 == 0 {
                add(bonds as f64, None, 0);
            }
            continue;
        }
        // c·a = 2πm − rest·π with |a| < π/2
        let cf = c as f64;
        let m_lo = ((rest as f64 * PI - cf.abs() * PI / 2.0) / (2.0 * PI)).floor() as i64 - 1;
        let m_hi = ((rest as f64 * PI + cf.abs() * PI / 2.0) / (2.0 * PI)).ceil() as i64 + 1;
        for m in m_lo..=m_hi {
            let a = (2.0 * PI * m as f64 - rest as f64 * PI) / cf;
            if a.abs() >= PI / 2.0 - 1e-12 {
                continue;
            }
            let v = k as f64 * (1.0 - a.cos()) + rest as f64 * (1.0 + a.cos());
            let index = if c < 0 { rest as usize - 1 } else { rest as usize };
            add(v, Some(index), binomial(bonds as u64, k as u64));
        }
    }
    if bonds % 4 == 0 {
        add(bonds as f64, None, 0);
    }
    found.sort_by(|a, b| a.v.total_cmp(&b.v));
    found
}

/// Widest critical-free gap of the fixed-end rotator chain whose midpoint
/// lies nearest to `target_vbar`, as (v̄_lo, v̄_hi).
pub fn rotator_chain_gap_near(n: usize, target_vbar: f64) -> (f64, f64) {
    let levels: Vec<f64> = rotator_chain_critical_levels(n).iter().map(|l| l.v / n as f64).collect();
    levels
        .windows(2)
        .map(|w| (w[0], w[1]))
        .min_by(|a, b| {
            let da = (0.5 * (a.0 + a.1) - target_vbar).abs();
            let db = (0.5 * (b.0 + b.1) - target_vbar).abs();
            da.total_cmp(&db)
        })
        .expect("at least two critical levels")
}

/// Critical-free gap of the fixed-end rotator chain that contains
/// `vbar`, or `None` when `vbar` is itself a critical level or outside
/// the level range.
pub fn rotator_chain_gap_containing(n: usize, vbar: f64) -> Option<(f64, f64)> {
    let levels: Vec<f64> = rotator_chain_critical_levels(n).iter().map(|l| l.v / n as f64).collect();
    levels
        .windows(2)
        .map(|w| (w[0], w[1]))
        .find(|(lo, hi)| *lo < vbar && vbar < *hi)
}

/// Gradient norm helper for callers that verify a reported point.
pub fn gradient_norm(model: &PotentialModel, q: &[f64]) -> Result<f64> {
    Ok(norm(&model.gradient(q)?))
}
