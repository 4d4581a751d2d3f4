//! Configurational entropy, its derivatives, β_N and the Legendre machinery.
//!
//! Sampler-facing code works at v = N·v̄. With S_N(v̄) = (1/N) log Ω(N v̄),
//! the k-th v̄-derivative is N^{k−1} times the k-th v-derivative of log Ω,
//! which the level-set identities turn into cumulant combinations of the
//! integrands α, P, W, Q.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::PotentialModel;
use crate::sampler::{batch_count, sample_level_set, SampleSet, ShellSamplerConfig};
use crate::stats;

// ---------------------------------------------------------------------------
// Brute-force density of states

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Per-coordinate lower bounds of the integration box.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Cells per axis (grid mode). Ignored when `hit_or_miss` is set.
    pub points_per_axis: usize,
    /// Uniform random points instead of a grid, with their seed.
    #[serde(default)]
    pub hit_or_miss: Option<(usize, u64)>,
    /// Fine energy histogram on [v_min, v_max].
    pub v_min: f64,
    pub v_max: f64,
    pub bins: usize,
}

impl GridSpec {
    /// Full torus (−π, π]^N for angular models.
    pub fn torus(n: usize, points_per_axis: usize, v_min: f64, v_max: f64, bins: usize) -> Self {
        use std::f64::consts::PI;
        Self {
            lower: vec![-PI; n],
            upper: vec![PI; n],
            points_per_axis,
            hit_or_miss: None,
            v_min,
            v_max,
            bins,
        }
    }

    /// Symmetric box [−half_width, half_width]^N.
    pub fn cube(n: usize, half_width: f64, points_per_axis: usize, v_min: f64, v_max: f64, bins: usize) -> Self {
        Self {
            lower: vec![-half_width; n],
            upper: vec![half_width; n],
            points_per_axis,
            hit_or_miss: None,
            v_min,
            v_max,
            bins,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.lower.len().min(self.upper.len()),
            });
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(b > a)) {
            return Err(invalid("upper", "must exceed lower on every axis"));
        }
        if !(self.v_max > self.v_min) || self.bins == 0 {
            return Err(invalid("bins", "need bins >= 1 and v_max > v_min"));
        }
        match self.hit_or_miss {
            Some((samples, _)) => {
                if n > 8 || samples < 1_000 {
                    return Err(invalid("hit_or_miss", "requires N <= 8 and >= 1000 points"));
                }
            }
            None => {
                if n > 4 || self.points_per_axis < 2 {
                    return Err(invalid("points_per_axis", "grid mode requires N <= 4 and >= 2 points"));
                }
            }
        }
        Ok(())
    }
}

/// Histogram of V over the uniform measure on a box, with per-bin first and
/// second offset sums so that kernel smoothing is exact to second order in
/// the bin width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityOfStatesTable {
    pub model: String,
    pub n: usize,
    pub spec: GridSpec,
    pub edges: Vec<f64>,
    /// Ω per bin: volume in the bin divided by the bin width.
    pub omega: Vec<f64>,
    /// M at each right bin edge.
    pub m: Vec<f64>,
    /// Volume with V below v_min.
    pub below: f64,
    /// Volume represented by one grid point.
    pub cell_volume: f64,
    pub total_volume: f64,
    counts: Vec<f64>,
    sum_delta: Vec<f64>,
    sum_delta2: Vec<f64>,
}

#[derive(Default, Clone)]
struct Accumulator {
    counts: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    below: f64,
    above: f64,
    boundary_in_range: f64,
}

impl Accumulator {
    fn new(bins: usize) -> Self {
        Self {
            counts: vec![0.0; bins],
            s1: vec![0.0; bins],
            s2: vec![0.0; bins],
            ..Self::default()
        }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        for i in 0..self.counts.len() {
            self.counts[i] += other.counts[i];
            self.s1[i] += other.s1[i];
            self.s2[i] += other.s2[i];
        }
        self.below += other.below;
        self.above += other.above;
        self.boundary_in_range += other.boundary_in_range;
        self
    }
}

fn gauss(u: f64, h: f64) -> f64 {
    (-0.5 * (u / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal CDF.
fn phi_cdf(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().cdf(x)
}

/// Tabulate V over a grid (or random points) and histogram it.
pub fn oracle_density_of_states(model: &PotentialModel, spec: &GridSpec) -> Result<DensityOfStatesTable> {
    let n = model.n();
    spec.validate(n)?;
    let bins = spec.bins;
    let width = (spec.v_max - spec.v_min) / bins as f64;
    let volume: f64 = spec.lower.iter().zip(&spec.upper).map(|(a, b)| b - a).product();
    let periodic = model.is_angular()
        && spec
            .lower
            .iter()
            .zip(&spec.upper)
            .all(|(a, b)| (b - a - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    let record = |acc: &mut Accumulator, q: &[f64], on_boundary: bool| {
        let v = model.evaluate_unchecked(q);
        if v < spec.v_min {
            acc.below += 1.0;
        } else if v >= spec.v_max {
            acc.above += 1.0;
        } else {
            let b = (((v - spec.v_min) / width) as usize).min(bins - 1);
            let d = v - (spec.v_min + (b as f64 + 0.5) * width);
            acc.counts[b] += 1.0;
            acc.s1[b] += d;
            acc.s2[b] += d * d;
        }
        if on_boundary && v < spec.v_max {
            acc.boundary_in_range += 1.0;
        }
    };
    let (acc, points) = match spec.hit_or_miss {
        Some((samples, seed)) => {
            let blocks = 64usize;
            let parts: Vec<Accumulator> = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let mut rng = crate::rng::stream(seed, b as u64);
                    let mut acc = Accumulator::new(bins);
                    let mut q = vec![0.0; n];
                    let count = samples * (b + 1) / blocks - samples * b / blocks;
                    for _ in 0..count {
                        for (i, x) in q.iter_mut().enumerate() {
                            *x = spec.lower[i] + (spec.upper[i] - spec.lower[i]) * rng.random::<f64>();
                        }
                        record(&mut acc, &q, false);
                    }
                    acc
                })
                .collect();
            let acc = parts.iter().fold(Accumulator::new(bins), |a, p| a.merge(p));
            (acc, samples as f64)
        }
        None => {
            let m = spec.points_per_axis;
            let step: Vec<f64> = spec
                .lower
                .iter()
                .zip(&spec.upper)
                .map(|(a, b)| (b - a) / m as f64)
                .collect();
            let inner = m.pow(n as u32 - 1);
            // one block per index of the first axis, reduced in index order
            let parts: Vec<Accumulator> = (0..m)
                .into_par_iter()
                .map(|i0| {
                    let mut acc = Accumulator::new(bins);
                    let mut q = vec![0.0; n];
                    q[0] = spec.lower[0] + (i0 as f64 + 0.5) * step[0];
                    for flat in 0..inner {
                        let mut rem = flat;
                        let mut boundary = i0 == 0 || i0 == m - 1;
                        for axis in 1..n {
                            let k = rem % m;
                            rem /= m;
                            boundary |= k == 0 || k == m - 1;
                            q[axis] = spec.lower[axis] + (k as f64 + 0.5) * step[axis];
                        }
                        record(&mut acc, &q, boundary && !periodic);
                    }
                    acc
                })
                .collect();
            let acc = parts.iter().fold(Accumulator::new(bins), |a, p| a.merge(p));
            (acc, (m as f64).powi(n as i32))
        }
    };
    let in_range = acc.below + acc.counts.iter().sum::<f64>();
    if in_range > 0.0 && acc.boundary_in_range / in_range > 1e-3 {
        return Err(Error::RangeTooSmall(format!(
            "{:.3}% of the sublevel mass lies on the box boundary",
            100.0 * acc.boundary_in_range / in_range
        )));
    }
    let cell_volume = volume / points;
    let edges: Vec<f64> = (0..=bins).map(|b| spec.v_min + b as f64 * width).collect();
    let omega: Vec<f64> = acc.counts.iter().map(|c| c * cell_volume / width).collect();
    let mut m = Vec::with_capacity(bins);
    let mut running = acc.below * cell_volume;
    for c in &acc.counts {
        running += c * cell_volume;
        m.push(running);
    }
    Ok(DensityOfStatesTable {
        model: model.kind().name().to_string(),
        n,
        spec: spec.clone(),
        edges,
        omega,
        m,
        below: acc.below * cell_volume,
        cell_volume,
        total_volume: volume,
        counts: acc.counts,
        sum_delta: acc.s1,
        sum_delta2: acc.s2,
    })
}

impl DensityOfStatesTable {
    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// M at right edges as a fraction of the box volume.
    pub fn m_fraction(&self) -> Vec<f64> {
        self.m.iter().map(|x| x / self.total_volume).collect()
    }

    /// Per-bin entropy (1/N) log Ω.
    pub fn entropy_per_bin(&self) -> Vec<f64> {
        self.omega.iter().map(|o| o.ln() / self.n as f64).collect()
    }

    fn bin_window(&self, v: f64, reach: f64) -> std::ops::Range<usize> {
        let w = self.bin_width();
        let lo = ((v - reach - self.spec.v_min) / w).floor().max(0.0) as usize;
        let hi = (((v + reach - self.spec.v_min) / w).ceil().max(0.0) as usize).min(self.counts.len());
        lo.min(hi)..hi
    }

    fn check_reach(&self, v: f64, reach: f64) -> Result<()> {
        if v - reach < self.spec.v_min || v + reach > self.spec.v_max {
            return Err(Error::RangeTooSmall(format!(
                "kernel support [{:.4}, {:.4}] leaves the table range [{}, {}]",
                v - reach,
                v + reach,
                self.spec.v_min,
                self.spec.v_max
            )));
        }
        Ok(())
    }

    /// Ω convolved with a Gaussian of bandwidth h, at v.
    pub fn omega_smoothed(&self, v: f64, h: f64) -> Result<f64> {
        let reach = 8.0 * h;
        self.check_reach(v, reach)?;
        let w = self.bin_width();
        let mut total = 0.0;
        for b in self.bin_window(v, reach) {
            let u = v - (self.spec.v_min + (b as f64 + 0.5) * w);
            let k = gauss(u, h);
            let k1 = -u / (h * h) * k;
            let k2 = (u * u / (h * h) - 1.0) / (h * h) * k;
            total += k * self.counts[b] - k1 * self.sum_delta[b] + 0.5 * k2 * self.sum_delta2[b];
        }
        Ok(total * self.cell_volume)
    }

    /// M convolved with the same kernel, at v.
    pub fn m_smoothed(&self, v: f64, h: f64) -> Result<f64> {
        let reach = 8.0 * h;
        self.check_reach(v, reach)?;
        let w = self.bin_width();
        let window = self.bin_window(v, reach);
        let mut total = self.below / self.cell_volume;
        total += self.counts[..window.start].iter().sum::<f64>();
        for b in window {
            let u = v - (self.spec.v_min + (b as f64 + 0.5) * w);
            let k = gauss(u, h);
            let k1 = -u / (h * h) * k;
            total += phi_cdf(u / h) * self.counts[b] - k * self.sum_delta[b] + 0.5 * k1 * self.sum_delta2[b];
        }
        Ok(total * self.cell_volume)
    }

    /// Bandwidth-smoothed S_N(v̄) = (1/N) log Ω_h(N v̄).
    pub fn entropy_smoothed(&self, vbar: f64, h: f64) -> Result<f64> {
        Ok(self.omega_smoothed(self.n as f64 * vbar, h)?.ln() / self.n as f64)
    }

    /// S_N(v̄) with the O(h²) smoothing bias removed by Richardson
    /// extrapolation over bandwidths {h, 2h}; returns (value, error estimate).
    pub fn entropy(&self, vbar: f64, h: f64) -> Result<(f64, f64)> {
        let a = self.entropy_smoothed(vbar, h)?;
        let b = self.entropy_smoothed(vbar, 2.0 * h)?;
        Ok(((4.0 * a - b) / 3.0, (a - b).abs() / 3.0))
    }

    /// S^(−)_N(v̄) = (1/N) log M(N v̄), bandwidth-smoothed.
    pub fn entropy_minus(&self, vbar: f64, h: f64) -> Result<f64> {
        Ok(self.m_smoothed(self.n as f64 * vbar, h)?.ln() / self.n as f64)
    }

    /// k-th v̄-derivative of S_N by central stencils on the Richardson
    /// entropy, with a combined truncation and smoothing error.
    pub fn entropy_derivative(&self, vbar: f64, k: usize, h: f64, step: f64) -> Result<OracleDerivative> {
        let rich = |x: f64| self.entropy(x, h).map(|p| p.0);
        let fine = stencil_derivative(rich, vbar, k, step)?;
        let coarse = stencil_derivative(rich, vbar, k, 2.0 * step)?;
        let sh = stencil_derivative(|x| self.entropy_smoothed(x, h), vbar, k, step)?;
        let s2h = stencil_derivative(|x| self.entropy_smoothed(x, 2.0 * h), vbar, k, step)?;
        Ok(OracleDerivative {
            order: k,
            vbar,
            value: fine,
            error: (fine - coarse).abs() + (sh - s2h).abs() / 3.0,
        })
    }
}

impl DensityOfStatesTable {
    /// Bandwidth for [`entropy_derivative`](Self::entropy_derivative) at v̄:
    /// `cap`, shrunk so that the coarse stencil and the 2h kernel stay
    /// inside the table range.
    pub fn fitting_bandwidth(&self, vbar: f64, k: usize, step: f64, cap: f64) -> f64 {
        let half = match k {
            0 => 0.0,
            1 | 2 => 2.0,
            _ => 3.0,
        };
        let n = self.n as f64;
        let v = n * vbar;
        let room = (v - self.spec.v_min).min(self.spec.v_max - v) - n * half * 2.0 * step;
        cap.min(0.95 * room / 16.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleDerivative {
    pub order: usize,
    pub vbar: f64,
    pub value: f64,
    pub error: f64,
}

/// Central finite-difference derivative of order k (1..=4): 5-point stencils
/// for k = 1, 2 and 7-point stencils for k = 3, 4, all fourth-order accurate.
pub fn stencil_derivative<F>(f: F, x: f64, k: usize, step: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let (coeffs, denom): (&[f64], f64) = match k {
        1 => (&[1.0, -8.0, 0.0, 8.0, -1.0], 12.0 * step),
        2 => (&[-1.0, 16.0, -30.0, 16.0, -1.0], 12.0 * step * step),
        3 => (&[1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0], 8.0 * step.powi(3)),
        4 => (&[-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0], 6.0 * step.powi(4)),
        _ => return Err(invalid("k", "must lie in 1..=4")),
    };
    if !(step > 0.0) {
        return Err(Error::StepUnderflow { step });
    }
    let half = (coeffs.len() / 2) as i32;
    let mut total = 0.0;
    for (i, c) in coeffs.iter().enumerate() {
        if *c != 0.0 {
            total += c * f(x + (i as i32 - half) as f64 * step)?;
        }
    }
    Ok(total / denom)
}

// ---------------------------------------------------------------------------
// Surface estimators

/// Moments entering the derivative combinations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub mean_alpha: f64,
    pub var_alpha: Option<f64>,
    pub mean_p: Option<f64>,
    pub mu3_alpha: Option<f64>,
    pub cov_alpha_p: Option<f64>,
    pub mean_w: Option<f64>,
    pub kappa4_alpha: Option<f64>,
    pub var_p: Option<f64>,
    pub cov_alpha_w: Option<f64>,
    /// ⟨δα² δP⟩
    pub alpha2_p: Option<f64>,
    pub mean_q: Option<f64>,
}

impl TermBreakdown {
    /// Population moments of the integrands over `idx` (all samples if None).
    fn from_columns(cols: &Columns, idx: Option<&[usize]>, k: usize) -> Self {
        let pick = |v: &[f64]| -> Vec<f64> {
            match idx {
                Some(ix) => ix.iter().map(|&i| v[i]).collect(),
                None => v.to_vec(),
            }
        };
        let a = pick(&cols.alpha);
        let ma = stats::mean(&a);
        let da: Vec<f64> = a.iter().map(|x| x - ma).collect();
        let m2 = stats::mean(&da.iter().map(|d| d * d).collect::<Vec<_>>());
        let mut t = TermBreakdown {
            mean_alpha: ma,
            ..Default::default()
        };
        if k >= 2 {
            let p = pick(&cols.p);
            let mp = stats::mean(&p);
            t.var_alpha = Some(m2);
            t.mean_p = Some(mp);
            if k >= 3 {
                let w = pick(&cols.w);
                let dp: Vec<f64> = p.iter().map(|x| x - mp).collect();
                t.mu3_alpha = Some(stats::mean(&da.iter().map(|d| d.powi(3)).collect::<Vec<_>>()));
                t.cov_alpha_p = Some(stats::mean(&da.iter().zip(&dp).map(|(x, y)| x * y).collect::<Vec<_>>()));
                t.mean_w = Some(stats::mean(&w));
                if k >= 4 {
                    let mw = stats::mean(&w);
                    let q = pick(&cols.q);
                    let m4 = stats::mean(&da.iter().map(|d| d.powi(4)).collect::<Vec<_>>());
                    t.kappa4_alpha = Some(m4 - 3.0 * m2 * m2);
                    t.var_p = Some(stats::mean(&dp.iter().map(|d| d * d).collect::<Vec<_>>()));
                    t.cov_alpha_w = Some(stats::mean(
                        &da.iter().zip(&w).map(|(x, y)| x * (y - mw)).collect::<Vec<_>>(),
                    ));
                    t.alpha2_p = Some(stats::mean(
                        &da.iter().zip(&dp).map(|(x, y)| x * x * y).collect::<Vec<_>>(),
                    ));
                    t.mean_q = Some(stats::mean(&q));
                }
            }
        }
        t
    }

    /// Bracketed cumulant combination, before the N^{k−1} factor.
    pub fn bracket(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.mean_alpha),
            2 => Some(self.var_alpha? + self.mean_p?),
            3 => Some(self.mu3_alpha? + 3.0 * self.cov_alpha_p? + self.mean_w?),
            4 => Some(
                self.kappa4_alpha?
                    + 6.0 * self.alpha2_p?
                    + 3.0 * self.var_p?
                    + 4.0 * self.cov_alpha_w?
                    + self.mean_q?,
            ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub order: usize,
    pub value: f64,
    pub stderr: f64,
    pub terms: TermBreakdown,
    pub n: usize,
    pub vbar: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub flags: Vec<String>,
}

impl DerivativeEstimate {
    /// The value re-derived from its own breakdown.
    pub fn recompute(&self) -> Option<f64> {
        Some((self.n as f64).powi(self.order as i32 - 1) * self.terms.bracket(self.order)?)
    }
}

struct Columns {
    alpha: Vec<f64>,
    p: Vec<f64>,
    w: Vec<f64>,
    q: Vec<f64>,
}

fn columns(set: &SampleSet, k: usize) -> Result<Columns> {
    let take = |f: fn(&crate::geometry::GeometryPoint) -> Option<f64>, name: &str| -> Result<Vec<f64>> {
        set.samples
            .iter()
            .map(|s| {
                f(&s.point).ok_or_else(|| {
                    Error::InsufficientData(format!("samples lack the {name} integrand"))
                })
            })
            .collect()
    };
    Ok(Columns {
        alpha: set.samples.iter().map(|s| s.point.alpha).collect(),
        p: if k >= 2 { take(|p| p.p, "P")? } else { Vec::new() },
        w: if k >= 3 { take(|p| p.w, "W")? } else { Vec::new() },
        q: if k >= 4 { take(|p| p.q, "Q")? } else { Vec::new() },
    })
}

/// ∂^k S_N/∂v̄^k from an existing sample set on Σ_{N v̄}.
pub fn estimate_from_samples(set: &SampleSet, n: usize, k: usize) -> Result<DerivativeEstimate> {
    if !(1..=4).contains(&k) {
        return Err(invalid("k", "must lie in 1..=4"));
    }
    if set.samples.len() < 2 * batch_count(set) {
        return Err(Error::InsufficientData(format!(
            "{} samples are too few for batch errors",
            set.samples.len()
        )));
    }
    let cols = columns(set, k)?;
    let factor = (n as f64).powi(k as i32 - 1);
    let terms = TermBreakdown::from_columns(&cols, None, k);
    let value = factor * terms.bracket(k).unwrap_or(f64::NAN);
    let stderr = stats::batch_jackknife(set.samples.len(), batch_count(set), |idx| {
        factor * TermBreakdown::from_columns(&cols, Some(idx), k).bracket(k).unwrap_or(f64::NAN)
    });
    let mut flags = set.diagnostics.warnings.clone();
    let tau = set.diagnostics.tau_int.get("alpha").copied().unwrap_or(1.0);
    if (set.samples.len() as f64) / tau < 100.0 {
        flags.push("fewer than 100 effective samples".into());
    }
    Ok(DerivativeEstimate {
        order: k,
        value,
        stderr,
        terms,
        n,
        vbar: set.config.v / n as f64,
        epsilon: set.config.epsilon,
        samples: set.samples.len(),
        flags,
    })
}

/// Sample Σ_{N v̄} and estimate ∂^k S_N/∂v̄^k. The level, and the integrand
/// order if lower than k, are taken from the arguments.
pub fn entropy_derivative(
    model: &PotentialModel,
    vbar: f64,
    k: usize,
    cfg: &ShellSamplerConfig,
) -> Result<DerivativeEstimate> {
    let set = sample_for(model, vbar, k, cfg)?;
    estimate_from_samples(&set, model.n(), k)
}

/// All derivatives up to `k_max` from a single sample set.
pub fn entropy_derivatives(
    model: &PotentialModel,
    vbar: f64,
    k_max: usize,
    cfg: &ShellSamplerConfig,
) -> Result<Vec<DerivativeEstimate>> {
    let set = sample_for(model, vbar, k_max, cfg)?;
    (1..=k_max).map(|k| estimate_from_samples(&set, model.n(), k)).collect()
}

/// Estimate at shell half-widths ε and ε/2 combined as (4·d(ε/2) − d(ε))/3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDerivative {
    pub order: usize,
    pub value: f64,
    pub stderr: f64,
    pub raw: (DerivativeEstimate, DerivativeEstimate),
    pub flags: Vec<String>,
}

/// Richardson combination of two estimates of the same order taken at ε and
/// ε/2. Falls back to the ε/2 value, flagged, when the correction is too
/// large to be an O(ε²) bias.
pub fn richardson_pair(at_eps: DerivativeEstimate, at_half: DerivativeEstimate) -> Result<PairedDerivative> {
    if at_eps.order != at_half.order || (at_half.epsilon * 2.0 - at_eps.epsilon).abs() > 1e-12 * at_eps.epsilon {
        return Err(invalid("pair", "estimates must share an order and have ε, ε/2 half-widths"));
    }
    let (a, b) = (&at_eps, &at_half);
    let mut flags: Vec<String> = a.flags.iter().chain(&b.flags).cloned().collect();
    flags.sort();
    flags.dedup();
    let value = (4.0 * b.value - a.value) / 3.0;
    let stderr = (16.0 * b.stderr * b.stderr + a.stderr * a.stderr).sqrt() / 3.0;
    let combined = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    let correction = (value - b.value).abs();
    let (value, stderr) = if correction > 10.0 * combined && correction > 0.1 * b.value.abs() {
        flags.push(format!(
            "extrapolation correction {correction:.3e} inconsistent with an O(eps^2) bias; eps/2 value returned"
        ));
        (b.value, b.stderr)
    } else {
        (value, stderr)
    };
    Ok(PairedDerivative {
        order: a.order,
        value,
        stderr,
        raw: (at_eps, at_half),
        flags,
    })
}

/// Derivatives up to `k_max`, each extrapolated from independent runs at
/// `cfg.epsilon` and half of it.
pub fn entropy_derivatives_paired(
    model: &PotentialModel,
    vbar: f64,
    k_max: usize,
    cfg: &ShellSamplerConfig,
) -> Result<Vec<PairedDerivative>> {
    let half = ShellSamplerConfig {
        epsilon: 0.5 * cfg.epsilon,
        seed: crate::rng::derive_seed(cfg.seed, 0x5eed_e9a1),
        ..cfg.clone()
    };
    let a = entropy_derivatives(model, vbar, k_max, cfg)?;
    let b = entropy_derivatives(model, vbar, k_max, &half)?;
    a.into_iter().zip(b).map(|(x, y)| richardson_pair(x, y)).collect()
}

fn sample_for(model: &PotentialModel, vbar: f64, k: usize, cfg: &ShellSamplerConfig) -> Result<SampleSet> {
    let v = model.n() as f64 * vbar;
    let cfg = ShellSamplerConfig {
        v,
        order: cfg.order.max(k),
        ..cfg.clone()
    };
    sample_level_set(model, &cfg)
}

// ---------------------------------------------------------------------------
// β_N

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMethod {
    Oracle,
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub method: BetaMethod,
    pub value: f64,
    pub stderr: f64,
    /// (1/N) log β, the gap between S_N and S^(−)_N.
    pub log_correction: f64,
}

/// β_N = Ω/M from an oracle table (smoothed with bandwidth h).
pub fn beta_oracle(table: &DensityOfStatesTable, vbar: f64, h: f64) -> Result<BetaEstimate> {
    let v = table.n as f64 * vbar;
    let m = table.m_smoothed(v, h)?;
    if !(m > 0.0) {
        return Err(Error::EmptySublevel { v });
    }
    let value = table.omega_smoothed(v, h)? / m;
    Ok(BetaEstimate {
        method: BetaMethod::Oracle,
        value,
        stderr: 0.0,
        log_correction: value.ln() / table.n as f64,
    })
}

/// ∂S_N/∂v̄ = ⟨α⟩ from level-set samples.
pub fn beta_surface(model: &PotentialModel, vbar: f64, cfg: &ShellSamplerConfig) -> Result<BetaEstimate> {
    let (lo, _) = model.energy_range();
    if (model.n() as f64 * vbar) < lo {
        return Err(Error::EmptySublevel {
            v: model.n() as f64 * vbar,
        });
    }
    let d = entropy_derivative(model, vbar, 1, cfg)?;
    Ok(BetaEstimate {
        method: BetaMethod::Surface,
        value: d.value,
        stderr: d.stderr,
        log_correction: d.value.ln() / model.n() as f64,
    })
}

// ---------------------------------------------------------------------------
// Harmonic closed forms, Ω ∝ v^{N/2 − 1}

pub mod harmonic {
    /// ∂^k S_N/∂v̄^k for V = ½‖q‖²: N^{k−1} (N/2 − 1) (−1)^{k−1} (k−1)!/v^k.
    pub fn entropy_derivative(n: usize, vbar: f64, k: usize) -> f64 {
        let nf = n as f64;
        let v = nf * vbar;
        let fact: f64 = (1..k).map(|i| i as f64).product();
        nf.powi(k as i32 - 1) * (nf / 2.0 - 1.0) * (-1.0f64).powi(k as i32 - 1) * fact / v.powi(k as i32)
    }

    /// β_N = Ω/M = 1/(2 v̄).
    pub fn beta(vbar: f64) -> f64 {
        0.5 / vbar
    }

    /// (1/N) log M(N v̄) up to an additive constant.
    pub fn entropy_minus(n: usize, vbar: f64) -> f64 {
        0.5 * (n as f64 * vbar).ln()
    }

    /// Thermodynamic-limit entropy ½ log(4πe v̄), whose Legendre transform is
    /// ½ log(2π/β).
    pub fn limit_entropy(vbar: f64) -> f64 {
        0.5 * (4.0 * std::f64::consts::PI * std::f64::consts::E * vbar).ln()
    }

    pub fn free_entropy(beta: f64) -> f64 {
        0.5 * (2.0 * std::f64::consts::PI / beta).ln()
    }
}

// ---------------------------------------------------------------------------
// Legendre transform and Helmholtz free energy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendreTable {
    /// Grid the transform was taken over.
    pub vbar: Vec<f64>,
    pub s: Vec<f64>,
    /// Chord slopes of S, one per grid interval.
    pub beta: Vec<f64>,
    /// f(β) = sup_v̄ {S(v̄) − β v̄} over the grid.
    pub f: Vec<f64>,
    pub concave: bool,
}

fn check_grid(vbar: &[f64], s: &[f64]) -> Result<()> {
    if vbar.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: vbar.len(),
            got: s.len(),
        });
    }
    if vbar.len() < 20 {
        return Err(invalid("vbar", "need at least 20 grid points"));
    }
    if vbar.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("vbar", "grid must be strictly increasing"));
    }
    Ok(())
}

/// f(β) = sup_v̄ {S(v̄) − β v̄}, i.e. −f = inf {β v̄ − S}, on the β grid of
/// chord slopes of S.
pub fn legendre(vbar: &[f64], s: &[f64]) -> Result<LegendreTable> {
    check_grid(vbar, s)?;
    let beta: Vec<f64> = vbar
        .windows(2)
        .zip(s.windows(2))
        .map(|(v, s)| (s[1] - s[0]) / (v[1] - v[0]))
        .collect();
    let scale = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let concave = beta.windows(2).all(|w| w[1] <= w[0] + 1e-12 * scale);
    let f = beta.iter().map(|&b| discrete_sup(vbar, s, b).0).collect();
    Ok(LegendreTable {
        vbar: vbar.to_vec(),
        s: s.to_vec(),
        beta,
        f,
        concave,
    })
}

fn discrete_sup(vbar: &[f64], s: &[f64], beta: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (v, sv)) in vbar.iter().zip(s).enumerate() {
        let g = sv - beta * v;
        if g > best.0 {
            best = (g, i);
        }
    }
    best
}

impl LegendreTable {
    /// f at an arbitrary β: discrete supremum with three-point parabolic
    /// refinement around the maximizing node.
    pub fn eval(&self, beta: f64) -> f64 {
        let (g, i) = discrete_sup(&self.vbar, &self.s, beta);
        if i == 0 || i + 1 == self.vbar.len() {
            return g;
        }
        let x = [self.vbar[i - 1], self.vbar[i], self.vbar[i + 1]];
        let y = [
            self.s[i - 1] - beta * x[0],
            g,
            self.s[i + 1] - beta * x[2],
        ];
        // vertex of the interpolating parabola
        let d01 = (y[1] - y[0]) / (x[1] - x[0]);
        let d12 = (y[2] - y[1]) / (x[2] - x[1]);
        let a = (d12 - d01) / (x[2] - x[0]);
        if !(a < 0.0) {
            return g;
        }
        let b = d01 - a * (x[0] + x[1]);
        let xv = (-b / (2.0 * a)).clamp(x[0], x[2]);
        y[0] + d01 * (xv - x[0]) + a * (xv - x[0]) * (xv - x[1])
    }

    /// inf_β {f(β) + β v̄} over the table's β grid: the concave hull of S.
    pub fn inverse(&self, vbar: f64) -> f64 {
        self.beta
            .iter()
            .zip(&self.f)
            .map(|(b, f)| f + b * vbar)
            .fold(f64::INFINITY, f64::min)
    }
}

/// F_N(β) = −(1/(2β)) log(π/β) − f_N(β)/β.
pub fn helmholtz(f: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(invalid("beta", "must be > 0"));
    }
    Ok(-(std::f64::consts::PI / beta).ln() / (2.0 * beta) - f / beta)
}

pub fn helmholtz_table(table: &LegendreTable) -> Result<Vec<f64>> {
    table.beta.iter().zip(&table.f).map(|(b, f)| helmholtz(*f, *b)).collect()
}

/// Tabulated S^(−), β, f and F on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermoCurves {
    pub vbar: Vec<f64>,
    pub s_minus: Vec<f64>,
    pub beta_of_v: Vec<f64>,
    pub legendre: LegendreTable,
    pub free_energy: Vec<f64>,
}

/// Thermodynamic curves from S^(−) on a grid; β(v̄) by central differences.
pub fn thermo_curves(vbar: &[f64], s_minus: &[f64]) -> Result<ThermoCurves> {
    let legendre = legendre(vbar, s_minus)?;
    let n = vbar.len();
    let beta_of_v = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (s_minus[b] - s_minus[a]) / (vbar[b] - vbar[a])
        })
        .collect();
    let free_energy = helmholtz_table(&legendre)?;
    Ok(ThermoCurves {
        vbar: vbar.to_vec(),
        s_minus: s_minus.to_vec(),
        beta_of_v,
        legendre,
        free_energy,
    })
}

// ---------------------------------------------------------------------------
// Output

/// One row of the entropy table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub vbar: f64,
    pub s: Option<f64>,
    pub derivative: [Option<f64>; 4],
    pub stderr: [Option<f64>; 4],
}

impl EntropyRow {
    pub fn from_estimates(vbar: f64, s: Option<f64>, estimates: &[DerivativeEstimate]) -> Self {
        let mut row = EntropyRow {
            vbar,
            s,
            ..Default::default()
        };
        for e in estimates {
            if (1..=4).contains(&e.order) {
                row.derivative[e.order - 1] = Some(e.value);
                row.stderr[e.order - 1] = Some(e.stderr);
            }
        }
        row
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// CSV with columns vbar, S, dS1..dS4, stderr1..stderr4; empty cells for
/// quantities not computed.
pub fn write_entropy_csv<W: Write>(rows: &[EntropyRow], mut w: W) -> Result<()> {
    writeln!(w, "vbar,S,dS1,dS2,dS3,dS4,stderr1,stderr2,stderr3,stderr4")?;
    for r in rows {
        let mut cells = vec![format!("{:e}", r.vbar), opt(r.s)];
        cells.extend(r.derivative.iter().map(|x| opt(*x)));
        cells.extend(r.stderr.iter().map(|x| opt(*x)));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
