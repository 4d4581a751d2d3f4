//! Thin-shell Markov chains on equipotential level sets.
//!
//! The target is the uniform law on the shell {q : |V(q) − v| ≤ ε}. By the
//! co-area formula its marginal on each level Σ_w inside the shell is
//! dσ/‖∇V‖, so the ε → 0 limit samples the microcanonical surface measure.
//!
//! Two reversible kernels are mixed by random scan:
//!
//! * an isotropic Gaussian step accepted iff it stays in the shell;
//! * a level-preserving move: a Gaussian step in the tangent space, projected
//!   back onto the current level along the normal, accepted with the
//!   Metropolis ratio for the density 1/‖∇V‖ with respect to surface measure
//!   and guarded by a reverse-projection check.
//!
//! The second kernel leaves every conditional law on Σ_w invariant and is what
//! makes chains mix along thin shells at useful speed.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{integrand_suite, GeometryOptions, GeometryPoint, DEFAULT_GRAD_FLOOR};
use crate::model::{dot, norm, PotentialModel};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShellSamplerConfig {
    /// Target potential energy (not per site).
    pub v: f64,
    /// Shell half-width in energy units.
    pub epsilon: f64,
    /// Initial isotropic proposal scale per coordinate.
    pub step_sigma: f64,
    /// Initial tangent proposal scale per coordinate.
    pub tangent_sigma: f64,
    /// Probability of choosing the level-preserving move at each step.
    pub manifold_fraction: f64,
    /// Steps per chain, burn-in included.
    pub n_steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Highest derivative order whose integrands are cached per sample.
    pub order: usize,
    /// Gradient norms below this mark a sample near-critical.
    pub grad_floor: f64,
    /// Tune proposal scales during burn-in.
    pub adapt: bool,
}

impl Default for ShellSamplerConfig {
    fn default() -> Self {
        Self {
            v: 1.0,
            epsilon: 1e-3,
            step_sigma: 1e-2,
            tangent_sigma: 0.1,
            manifold_fraction: 0.5,
            n_steps: 20_000,
            burn_in: 2_000,
            thinning: 1,
            n_chains: 4,
            seed: 0,
            order: 2,
            grad_floor: DEFAULT_GRAD_FLOOR,
            adapt: true,
        }
    }
}

impl ShellSamplerConfig {
    /// Defaults for level `v`, with ε = 1e−3·max(|v|, 1).
    pub fn new(v: f64) -> Self {
        Self {
            v,
            epsilon: 1e-3 * v.abs().max(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.v.is_finite() {
            return Err(invalid("v", "must be finite"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be > 0"));
        }
        if !(self.step_sigma > 0.0) {
            return Err(invalid("step_sigma", "must be > 0"));
        }
        if !(self.tangent_sigma > 0.0) {
            return Err(invalid("tangent_sigma", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.manifold_fraction) {
            return Err(invalid("manifold_fraction", "must lie in [0, 1]"));
        }
        if self.n_steps <= self.burn_in {
            return Err(invalid("n_steps", "must exceed burn_in"));
        }
        if self.thinning == 0 {
            return Err(invalid("thinning", "must be >= 1"));
        }
        if self.n_chains == 0 {
            return Err(invalid("n_chains", "must be >= 1"));
        }
        if !(1..=4).contains(&self.order) {
            return Err(invalid("order", "must lie in 1..=4"));
        }
        if !(self.grad_floor >= 0.0) {
            return Err(invalid("grad_floor", "must be >= 0"));
        }
        Ok(())
    }

    pub fn geometry_options(&self) -> GeometryOptions {
        GeometryOptions {
            grad_floor: self.grad_floor,
            ..GeometryOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetSample {
    pub chain: usize,
    pub step: usize,
    pub point: GeometryPoint,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    pub isotropic_acceptance: f64,
    pub manifold_acceptance: f64,
    /// Integrated autocorrelation time per observable, averaged over chains.
    pub tau_int: BTreeMap<String, f64>,
    /// Split-chain R̂ per observable.
    pub rhat: BTreeMap<String, f64>,
    pub near_critical_events: usize,
    /// Samples dropped because an integrand could not be evaluated.
    pub failed_evaluations: usize,
    pub final_step_sigma: Vec<f64>,
    pub final_tangent_sigma: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub config: ShellSamplerConfig,
    /// Ordered by chain, then step.
    pub samples: Vec<LevelSetSample>,
    pub diagnostics: ChainDiagnostics,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-chain series of an observable.
    pub fn chain_series<F: Fn(&LevelSetSample) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.config.n_chains];
        for s in &self.samples {
            out[s.chain].push(f(s));
        }
        out
    }

    pub fn values<F: Fn(&LevelSetSample) -> f64>(&self, f: F) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }
}

#[derive(Debug, Default)]
struct Counters {
    iso_tried: usize,
    iso_accepted: usize,
    man_tried: usize,
    man_accepted: usize,
    near_critical: usize,
    failed: usize,
}

struct ChainOutput {
    samples: Vec<LevelSetSample>,
    counters: Counters,
    step_sigma: f64,
    tangent_sigma: f64,
}

struct Chain<'a> {
    model: &'a PotentialModel,
    cfg: &'a ShellSamplerConfig,
    rng: ChaCha8Rng,
    x: Vec<f64>,
    vx: f64,
    gx: Vec<f64>,
    gnx: f64,
    step_sigma: f64,
    tangent_sigma: f64,
    // scratch
    y: Vec<f64>,
    gy: Vec<f64>,
    t: Vec<f64>,
}

const PROJECTION_ITERS: usize = 40;
const ADAPT_WINDOW: usize = 100;

impl<'a> Chain<'a> {
    fn new(model: &'a PotentialModel, cfg: &'a ShellSamplerConfig, chain: usize) -> Result<Self> {
        let mut rng = crate::rng::stream(cfg.seed, chain as u64);
        let x = initialize_on_shell(model, cfg.v, cfg.epsilon, &mut rng)?;
        let n = x.len();
        let mut gx = vec![0.0; n];
        let vx = model.energy_gradient(&x, &mut gx);
        let gnx = norm(&gx);
        // an isotropic step should move V by a fraction of the shell width
        let step_sigma = if gnx > 0.0 {
            cfg.step_sigma.min(cfg.epsilon / gnx)
        } else {
            cfg.step_sigma
        };
        Ok(Self {
            model,
            cfg,
            rng,
            x,
            vx,
            gx,
            gnx,
            step_sigma,
            tangent_sigma: cfg.tangent_sigma,
            y: vec![0.0; n],
            gy: vec![0.0; n],
            t: vec![0.0; n],
        })
    }

    fn in_shell(&self, v: f64) -> bool {
        (v - self.cfg.v).abs() <= self.cfg.epsilon
    }

    fn isotropic(&mut self) -> bool {
        for (y, x) in self.y.iter_mut().zip(&self.x) {
            let z: f64 = self.rng.sample(StandardNormal);
            *y = x + self.step_sigma * z;
        }
        self.model.normalize(&mut self.y);
        let vy = self.model.energy_gradient(&self.y, &mut self.gy);
        if !self.in_shell(vy) {
            return false;
        }
        self.accept(vy);
        true
    }

    fn accept(&mut self, vy: f64) {
        std::mem::swap(&mut self.x, &mut self.y);
        std::mem::swap(&mut self.gx, &mut self.gy);
        self.vx = vy;
        self.gnx = norm(&self.gx);
    }

    fn manifold(&mut self) -> bool {
        let n = self.x.len();
        if n < 2 || !(self.gnx > 0.0) {
            return false;
        }
        let s = self.tangent_sigma;
        let unit_x: Vec<f64> = self.gx.iter().map(|g| g / self.gnx).collect();
        for t in self.t.iter_mut() {
            *t = s * self.rng.sample::<f64, _>(StandardNormal);
        }
        let along = dot(&self.t, &unit_x);
        for (t, u) in self.t.iter_mut().zip(&unit_x) {
            *t -= along * u;
        }
        let t2 = dot(&self.t, &self.t);
        let level = self.vx;
        let base: Vec<f64> = self.x.iter().zip(&self.t).map(|(x, t)| x + t).collect();
        // y stays unwrapped until the move is accepted, so the reverse step is
        // the true displacement on the covering space
        let Some(mut y) = project(self.model, &base, &unit_x, level) else {
            return false;
        };
        let vy = self.model.energy_gradient(&y, &mut self.gy);
        if !self.in_shell(vy) {
            return false;
        }
        let gny = norm(&self.gy);
        if !(gny > 0.0) {
            return false;
        }
        let unit_y: Vec<f64> = self.gy.iter().map(|g| g / gny).collect();
        // reverse tangent step: component of (x − y) orthogonal to n_y
        let mut back: Vec<f64> = self.x.iter().zip(&y).map(|(x, y)| x - y).collect();
        let along_y = dot(&back, &unit_y);
        for (b, u) in back.iter_mut().zip(&unit_y) {
            *b -= along_y * u;
        }
        let back2 = dot(&back, &back);
        let log_ratio = (self.gnx / gny).ln() - (back2 - t2) / (2.0 * s * s);
        let u: f64 = self.rng.random();
        if !(u.ln() < log_ratio) {
            return false;
        }
        // the reverse projection must land back on x
        let rbase: Vec<f64> = y.iter().zip(&back).map(|(y, b)| y + b).collect();
        let Some(xr) = project(self.model, &rbase, &unit_y, vy) else {
            return false;
        };
        let dist = xr.iter().zip(&self.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = 1.0 + self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dist > 1e-7 * scale {
            return false;
        }
        self.model.normalize(&mut y);
        self.y = y;
        self.accept(vy);
        true
    }

    fn run(mut self, chain: usize) -> Result<ChainOutput> {
        let cfg = self.cfg;
        let opts = cfg.geometry_options();
        let mut counters = Counters::default();
        let mut samples = Vec::with_capacity((cfg.n_steps - cfg.burn_in) / cfg.thinning + 1);
        let (mut iso_window, mut iso_hits, mut man_window, mut man_hits) = (0, 0, 0, 0);
        let max_tangent = if self.model.is_angular() { 1.0 } else { f64::INFINITY };
        for step in 0..cfg.n_steps {
            let burning = step < cfg.burn_in;
            let use_manifold = self.rng.random::<f64>() < cfg.manifold_fraction;
            if use_manifold {
                let ok = self.manifold();
                if burning {
                    man_window += 1;
                    man_hits += ok as usize;
                } else {
                    counters.man_tried += 1;
                    counters.man_accepted += ok as usize;
                }
            } else {
                let ok = self.isotropic();
                if burning {
                    iso_window += 1;
                    iso_hits += ok as usize;
                } else {
                    counters.iso_tried += 1;
                    counters.iso_accepted += ok as usize;
                }
            }
            if burning && cfg.adapt {
                if iso_window == ADAPT_WINDOW {
                    self.step_sigma *= adapt_factor(iso_hits as f64 / iso_window as f64);
                    iso_window = 0;
                    iso_hits = 0;
                }
                if man_window == ADAPT_WINDOW {
                    self.tangent_sigma = (self.tangent_sigma
                        * adapt_factor(man_hits as f64 / man_window as f64))
                    .min(max_tangent);
                    man_window = 0;
                    man_hits = 0;
                }
            }
            if !burning && (step - cfg.burn_in).is_multiple_of(cfg.thinning) {
                match integrand_suite(self.model, &self.x, cfg.order, &opts) {
                    Ok(point) => samples.push(LevelSetSample { chain, step, point }),
                    Err(Error::NearCritical { .. }) => counters.near_critical += 1,
                    Err(_) => counters.failed += 1,
                }
            }
        }
        Ok(ChainOutput {
            samples,
            counters,
            step_sigma: self.step_sigma,
            tangent_sigma: self.tangent_sigma,
        })
    }
}

/// Multiplicative scale update steering acceptance toward ~0.3.
fn adapt_factor(rate: f64) -> f64 {
    if rate < 0.05 {
        0.3
    } else {
        (2.5 * (rate - 0.3)).exp()
    }
}

/// Solve V(base + a·n) = level for the scalar a by Newton's method.
fn project(model: &PotentialModel, base: &[f64], n: &[f64], level: f64) -> Option<Vec<f64>> {
    let mut z = base.to_vec();
    let mut g = vec![0.0; z.len()];
    let mut a = 0.0;
    let tol = 1e-12 * level.abs().max(1.0);
    for _ in 0..PROJECTION_ITERS {
        for ((z, b), u) in z.iter_mut().zip(base).zip(n) {
            *z = b + a * u;
        }
        let f = model.energy_gradient(&z, &mut g) - level;
        if f.abs() <= tol {
            return Some(z);
        }
        let slope = dot(&g, n);
        if !(slope.abs() > 1e-300) {
            return None;
        }
        a -= f / slope;
        if !a.is_finite() {
            return None;
        }
    }
    None
}

/// Relax a random configuration onto the shell by 1-D Newton along ∇V.
pub fn initialize_on_shell(
    model: &PotentialModel,
    v: f64,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let (lo, hi) = model.energy_range();
    if v < lo || v > hi {
        return Err(Error::EmptySublevel { v });
    }
    let n = model.n();
    const ATTEMPTS: usize = 200;
    let mut g = vec![0.0; n];
    for attempt in 0..ATTEMPTS {
        let mut q: Vec<f64> = if model.is_angular() {
            // shrink the start toward the minimum on low levels
            let width = (std::f64::consts::PI * (v / n as f64).max(0.0).sqrt()).min(std::f64::consts::PI);
            (0..n).map(|_| width * (2.0 * rng.random::<f64>() - 1.0)).collect()
        } else {
            let s = (2.0 * v.abs().max(1.0) / n as f64).sqrt();
            (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        // later attempts start from wider random points
        if attempt > ATTEMPTS / 2 && model.is_angular() {
            for x in q.iter_mut() {
                *x = std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        for _ in 0..500 {
            let e = model.energy_gradient(&q, &mut g) - v;
            if e.abs() <= 0.25 * epsilon {
                return Ok(q);
            }
            let g2 = dot(&g, &g);
            if !(g2 > 1e-20) {
                break;
            }
            let mut scale = -e / g2;
            let step = scale.abs() * g2.sqrt();
            let cap = if model.is_angular() {
                0.5
            } else {
                0.5 * (1.0 + norm(&q))
            };
            if step > cap {
                scale *= cap / step;
            }
            for (x, gi) in q.iter_mut().zip(&g) {
                *x += scale * gi;
            }
            model.normalize(&mut q);
        }
    }
    Err(Error::ShellInit {
        target: v,
        epsilon,
        attempts: ATTEMPTS,
    })
}

/// Run `n_chains` independent chains (in parallel) and collect thinned,
/// post-burn-in samples with their integrands and diagnostics.
pub fn sample_level_set(model: &PotentialModel, cfg: &ShellSamplerConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let outputs: Vec<ChainOutput> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| Chain::new(model, cfg, c)?.run(c))
        .collect::<Result<_>>()?;
    let mut counters = Counters::default();
    let mut diag = ChainDiagnostics::default();
    let mut samples = Vec::new();
    for out in outputs {
        counters.iso_tried += out.counters.iso_tried;
        counters.iso_accepted += out.counters.iso_accepted;
        counters.man_tried += out.counters.man_tried;
        counters.man_accepted += out.counters.man_accepted;
        counters.near_critical += out.counters.near_critical;
        counters.failed += out.counters.failed;
        diag.final_step_sigma.push(out.step_sigma);
        diag.final_tangent_sigma.push(out.tangent_sigma);
        samples.extend(out.samples);
    }
    let ratio = |a: usize, t: usize| if t == 0 { f64::NAN } else { a as f64 / t as f64 };
    diag.isotropic_acceptance = ratio(counters.iso_accepted, counters.iso_tried);
    diag.manifold_acceptance = ratio(counters.man_accepted, counters.man_tried);
    diag.acceptance_rate = ratio(
        counters.iso_accepted + counters.man_accepted,
        counters.iso_tried + counters.man_tried,
    );
    diag.near_critical_events = counters.near_critical;
    diag.failed_evaluations = counters.failed;
    let mut set = SampleSet {
        config: cfg.clone(),
        samples,
        diagnostics: diag,
    };
    fill_series_diagnostics(&mut set);
    Ok(set)
}

type Observable = fn(&LevelSetSample) -> f64;

fn fill_series_diagnostics(set: &mut SampleSet) {
    let observables: [(&str, Observable); 2] =
        [("V", |s| s.point.energy), ("alpha", |s| s.point.alpha)];
    for (name, f) in observables {
        let series = set.chain_series(f);
        let usable: Vec<&[f64]> = series.iter().filter(|c| c.len() >= 4).map(|c| c.as_slice()).collect();
        if usable.is_empty() {
            continue;
        }
        let tau = usable.iter().map(|c| stats::integrated_autocorrelation(c)).sum::<f64>()
            / usable.len() as f64;
        set.diagnostics.tau_int.insert(name.to_string(), tau);
        set.diagnostics.rhat.insert(name.to_string(), stats::split_rhat(&usable));
    }
    let d = &mut set.diagnostics;
    if d.acceptance_rate < 0.05 {
        d.warnings.push(format!(
            "low acceptance rate {:.3}: proposal scale too large",
            d.acceptance_rate
        ));
    }
    if let Some(r) = d.rhat.get("alpha") {
        if *r > 1.1 {
            d.warnings.push(format!("split R-hat of alpha is {r:.3}"));
        }
    }
    if d.near_critical_events > 0 {
        d.warnings.push(format!(
            "{} near-critical samples skipped",
            d.near_critical_events
        ));
    }
    if d.failed_evaluations > 0 {
        d.warnings.push(format!(
            "{} samples dropped after failed integrand evaluation",
            d.failed_evaluations
        ));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceAverage {
    pub mean: f64,
    pub stderr: f64,
    pub effective_samples: f64,
    pub low_confidence: bool,
}

/// Number of batches used for batch-means errors.
pub fn batch_count(set: &SampleSet) -> usize {
    20.max(set.config.n_chains)
}

/// Plain average of an observable with its batch-means standard error.
pub fn surface_average<F: Fn(&LevelSetSample) -> f64>(set: &SampleSet, f: F) -> SurfaceAverage {
    let x = set.values(&f);
    if x.is_empty() {
        return SurfaceAverage {
            mean: f64::NAN,
            stderr: f64::NAN,
            effective_samples: 0.0,
            low_confidence: true,
        };
    }
    let mean = stats::mean(&x);
    let series = set.chain_series(&f);
    let taus: Vec<f64> = series
        .iter()
        .filter(|c| c.len() >= 4)
        .map(|c| stats::integrated_autocorrelation(c))
        .collect();
    let tau = if taus.is_empty() {
        1.0
    } else {
        stats::mean(&taus)
    };
    let effective_samples = x.len() as f64 / tau;
    let stderr = if x.len() >= 2 * batch_count(set) {
        let s = stats::batch_means_stderr(&x, batch_count(set));
        if s.is_finite() {
            s
        } else {
            0.0
        }
    } else {
        f64::NAN
    };
    SurfaceAverage {
        mean,
        stderr,
        effective_samples,
        low_confidence: effective_samples < 100.0 || !stderr.is_finite(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub value: f64,
    pub stderr: f64,
    /// Raw estimates at ε and ε/2.
    pub raw: (SurfaceAverage, SurfaceAverage),
    pub warning: Option<String>,
}

/// Richardson ε → 0 estimate from runs at (ε, ε/2), assuming O(ε²) bias.
pub fn epsilon_extrapolate<F: Fn(&LevelSetSample) -> f64 + Sync>(
    model: &PotentialModel,
    cfg: &ShellSamplerConfig,
    observable: F,
    eps_pair: (f64, f64),
) -> Result<Extrapolation> {
    let (e1, e2) = eps_pair;
    if !(e1 > 0.0 && e2 > 0.0 && e2 < e1) {
        return Err(invalid("eps_pair", "must satisfy 0 < eps_half < eps"));
    }
    let run = |eps: f64| -> Result<SurfaceAverage> {
        let c = ShellSamplerConfig {
            epsilon: eps,
            ..cfg.clone()
        };
        Ok(surface_average(&sample_level_set(model, &c)?, &observable))
    };
    let a = run(e1)?;
    let b = run(e2)?;
    let r = (e1 / e2).powi(2);
    let value = (r * b.mean - a.mean) / (r - 1.0);
    let stderr = (r * r * b.stderr * b.stderr + a.stderr * a.stderr).sqrt() / (r - 1.0);
    let correction = (value - b.mean).abs();
    let combined = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    if correction > 10.0 * combined && correction > 0.1 * b.mean.abs() {
        return Ok(Extrapolation {
            value: b.mean,
            stderr: b.stderr,
            raw: (a, b),
            warning: Some(format!(
                "extrapolation correction {correction:.3e} inconsistent with an O(eps^2) bias; raw value returned"
            )),
        });
    }
    Ok(Extrapolation {
        value,
        stderr,
        raw: (a, b),
        warning: None,
    })
}

/// Raw sample dump: chain_id, step, V, grad_norm, alpha and the higher
/// integrands that were computed.
pub fn write_samples_csv<W: Write>(set: &SampleSet, mut w: W) -> Result<()> {
    let order = set.config.order;
    let mut header = String::from("chain_id,step,V,grad_norm,alpha");
    for (k, name) in [(2, ",P"), (3, ",W"), (4, ",Q")] {
        if order >= k {
            header.push_str(name);
        }
    }
    writeln!(w, "{header}")?;
    for s in &set.samples {
        let p = &s.point;
        write!(w, "{},{},{:e},{:e},{:e}", s.chain, s.step, p.energy, p.grad_norm, p.alpha)?;
        for x in [p.p, p.w, p.q].into_iter().flatten() {
            write!(w, ",{x:e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
