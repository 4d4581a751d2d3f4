//! Moment scaling of sum functions s′_N = (1/N) Σ η_k of i.i.d. variables,
//! the ratio-average factorization ⟨X/Y⟩ → ⟨X⟩/⟨Y⟩, and Gaussianity
//! distances.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{self, LinearFit};

pub const MIN_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseDistribution {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
    Exponential { rate: f64 },
    Constant { value: f64 },
}

impl BaseDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseDistribution::Uniform { lo, hi } if !(hi > lo) => Err(invalid("hi", "must exceed lo")),
            BaseDistribution::Gaussian { std, .. } if !(std > 0.0) => Err(invalid("std", "must be > 0")),
            BaseDistribution::Exponential { rate } if !(rate > 0.0) => Err(invalid("rate", "must be > 0")),
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            BaseDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            BaseDistribution::Gaussian { mean, std } => mean + std * rng.sample::<f64, _>(StandardNormal),
            BaseDistribution::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            BaseDistribution::Constant { value } => value,
        }
    }

    /// Symmetric about its mean (odd central moments vanish).
    pub fn is_symmetric(&self) -> bool {
        !matches!(self, BaseDistribution::Exponential { .. })
    }

    pub fn describe(&self) -> String {
        match *self {
            BaseDistribution::Uniform { lo, hi } => format!("uniform({lo}, {hi})"),
            BaseDistribution::Gaussian { mean, std } => format!("gaussian(mean {mean}, std {std})"),
            BaseDistribution::Exponential { rate } => format!("exponential(rate {rate})"),
            BaseDistribution::Constant { value } => format!("constant({value})"),
        }
    }
}

/// Mergeable running central moments up to order four.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator {
    pub n: f64,
    pub mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let t1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += t1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += t1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += t1;
    }

    pub fn merge(&self, o: &MomentAccumulator) -> MomentAccumulator {
        if self.n == 0.0 {
            return *o;
        }
        if o.n == 0.0 {
            return *self;
        }
        let (na, nb) = (self.n, o.n);
        let n = na + nb;
        let d = o.mean - self.mean;
        let d2 = d * d;
        let m2 = self.m2 + o.m2 + d2 * na * nb / n;
        let m3 = self.m3 + o.m3 + d * d2 * na * nb * (na - nb) / (n * n)
            + 3.0 * d * (na * o.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + o.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * o.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * o.m3 - nb * self.m3) / n;
        MomentAccumulator {
            n,
            mean: self.mean + d * nb / n,
            m2,
            m3,
            m4,
        }
    }

    /// Population central moments (μ2, μ3, μ4).
    pub fn central(&self) -> (f64, f64, f64) {
        (self.m2 / self.n, self.m3 / self.n, self.m4 / self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: usize,
    pub trials: usize,
    /// B′ = μ2(s′)
    pub b: f64,
    /// C′ = signed μ3(s′)
    pub c: f64,
    /// D′ = μ4(s′)
    pub d: f64,
    /// K′ = D′ − 3B′²
    pub k: f64,
    /// The alternative normalization D′/3 − B′².
    pub k_alt: f64,
    pub nb: f64,
    pub n2c: f64,
    pub n3k: f64,
    pub nb_err: f64,
    pub n2c_err: f64,
    pub n3k_err: f64,
    /// KS distance of standardized s′ from the unit Gaussian.
    pub ks: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
}

impl From<LinearFit> for ExponentFit {
    fn from(f: LinearFit) -> Self {
        Self {
            slope: f.slope,
            stderr: f.slope_stderr,
            ci95: (f.slope - 1.96 * f.slope_stderr, f.slope + 1.96 * f.slope_stderr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub base: BaseDistribution,
    pub base_description: String,
    pub rows: Vec<MomentRow>,
    pub b_exponent: ExponentFit,
    /// Fit of log|K′| over rungs where K′ is resolved from zero at 3σ.
    pub k_exponent: Option<ExponentFit>,
}

const BLOCK: usize = 2048;
const BATCHES: usize = 20;
const KS_SAMPLES: usize = 100_000;

struct Rung {
    batches: Vec<MomentAccumulator>,
    head: Vec<f64>,
}

fn simulate_rung(base: &BaseDistribution, n: usize, trials: usize, seed: u64) -> Rung {
    let blocks = trials.div_ceil(BLOCK);
    let parts: Vec<(MomentAccumulator, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = crate::rng::stream(seed, b as u64);
            let count = ((b + 1) * BLOCK).min(trials) - b * BLOCK;
            let keep = b * BLOCK < KS_SAMPLES;
            let mut acc = MomentAccumulator::default();
            let mut head = Vec::new();
            for _ in 0..count {
                let mut s = 0.0;
                for _ in 0..n {
                    s += base.sample(&mut rng);
                }
                let s = s / n as f64;
                acc.push(s);
                if keep {
                    head.push(s);
                }
            }
            (acc, head)
        })
        .collect();
    let mut batches = vec![MomentAccumulator::default(); BATCHES.min(blocks)];
    let nb = batches.len();
    let mut head = Vec::new();
    for (b, (acc, h)) in parts.iter().enumerate() {
        let slot = b * nb / blocks;
        batches[slot] = batches[slot].merge(acc);
        head.extend_from_slice(h);
    }
    head.truncate(KS_SAMPLES);
    Rung { batches, head }
}

fn rung_stats(acc: &MomentAccumulator, n: usize) -> [f64; 3] {
    let (b, c, d) = acc.central();
    let nf = n as f64;
    [nf * b, nf * nf * c, nf.powi(3) * (d - 3.0 * b * b)]
}

/// Draw `trials` realizations of s′_N per rung and report central moments
/// with delete-one-batch jackknife errors.
pub fn sum_function_moments(
    base: &BaseDistribution,
    ladder: &[usize],
    trials: usize,
    seed: u64,
) -> Result<MomentReport> {
    base.validate()?;
    if trials < MIN_TRIALS {
        return Err(invalid("trials", format!("must be >= {MIN_TRIALS}")));
    }
    if ladder.len() < 2 || ladder.contains(&0) {
        return Err(invalid("ladder", "need at least two positive N values"));
    }
    let mut rows = Vec::new();
    for (i, &n) in ladder.iter().enumerate() {
        let rung = simulate_rung(base, n, trials, crate::rng::derive_seed(seed, i as u64));
        let total = rung.batches.iter().fold(MomentAccumulator::default(), |a, b| a.merge(b));
        let (b, c, d) = total.central();
        let full = rung_stats(&total, n);
        let mut errs = [0.0; 3];
        let nb = rung.batches.len() as f64;
        let jk: Vec<[f64; 3]> = (0..rung.batches.len())
            .map(|skip| {
                let acc = rung
                    .batches
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != skip)
                    .fold(MomentAccumulator::default(), |a, (_, b)| a.merge(b));
                rung_stats(&acc, n)
            })
            .collect();
        for (s, err) in errs.iter_mut().enumerate() {
            let m = jk.iter().map(|x| x[s]).sum::<f64>() / nb;
            *err = ((nb - 1.0) / nb * jk.iter().map(|x| (x[s] - m).powi(2)).sum::<f64>()).sqrt();
        }
        let ks = if stats::variance(&rung.head) > 0.0 {
            stats::ks_distance_to_normal(&rung.head)
        } else {
            f64::NAN
        };
        rows.push(MomentRow {
            n,
            trials,
            b,
            c,
            d,
            k: d - 3.0 * b * b,
            k_alt: d / 3.0 - b * b,
            nb: full[0],
            n2c: full[1],
            n3k: full[2],
            nb_err: errs[0],
            n2c_err: errs[1],
            n3k_err: errs[2],
            ks,
        });
    }
    let logn: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let logb: Vec<f64> = rows.iter().map(|r| r.b.ln()).collect();
    let b_exponent = stats::linear_fit(&logn, &logb).into();
    let resolved: Vec<&MomentRow> = rows.iter().filter(|r| r.n3k.abs() > 3.0 * r.n3k_err).collect();
    let k_exponent = (resolved.len() >= 2).then(|| {
        let x: Vec<f64> = resolved.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = resolved.iter().map(|r| r.k.abs().ln()).collect();
        let s: Vec<f64> = resolved.iter().map(|r| r.n3k_err / r.n3k.abs()).collect();
        stats::weighted_linear_fit(&x, &y, &s).into()
    });
    Ok(MomentReport {
        base: *base,
        base_description: base.describe(),
        rows,
        b_exponent,
        k_exponent,
    })
}

/// KS distance between standardized samples and the unit Gaussian.
pub fn gaussianity_distance(samples: &[f64]) -> Result<f64> {
    if samples.len() < MIN_TRIALS {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {MIN_TRIALS}",
            samples.len()
        )));
    }
    if !(stats::variance(samples) > 0.0) {
        return Err(Error::InsufficientData("degenerate variance".into()));
    }
    Ok(stats::ks_distance_to_normal(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// X and Y built from independent draws.
    Independent,
    /// Y is the same realization as X.
    Identical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: usize,
    pub trials: usize,
    pub gap: f64,
    pub gap_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
    /// Weighted fit of log|gap| against log N; None when no rung resolves
    /// the gap from zero.
    pub exponent: Option<ExponentFit>,
}

/// Gap ⟨X/Y⟩ − ⟨X⟩/⟨Y⟩ for X = Σ η_k, Y = Σ ζ_k over an N ladder.
pub fn ratio_average_check(
    x: &BaseDistribution,
    y: &BaseDistribution,
    coupling: Coupling,
    ladder: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RatioReport> {
    x.validate()?;
    y.validate()?;
    if trials < MIN_TRIALS {
        return Err(invalid("trials", format!("must be >= {MIN_TRIALS}")));
    }
    let mut rows = Vec::new();
    for (i, &n) in ladder.iter().enumerate() {
        let rung_seed = crate::rng::derive_seed(seed, 0x5A70 + i as u64);
        let blocks = trials.div_ceil(BLOCK);
        let draws: Vec<Vec<(f64, f64)>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = crate::rng::stream(rung_seed, b as u64);
                let count = ((b + 1) * BLOCK).min(trials) - b * BLOCK;
                (0..count)
                    .map(|_| {
                        let mut sx = 0.0;
                        let mut sy = 0.0;
                        for _ in 0..n {
                            sx += x.sample(&mut rng);
                        }
                        match coupling {
                            Coupling::Identical => sy = sx,
                            Coupling::Independent => {
                                for _ in 0..n {
                                    sy += y.sample(&mut rng);
                                }
                            }
                        }
                        (sx, sy)
                    })
                    .collect()
            })
            .collect();
        let pairs: Vec<(f64, f64)> = draws.into_iter().flatten().collect();
        if let Some(bad) = pairs.iter().find(|p| !(p.1 > 0.0)) {
            return Err(Error::Hypothesis(format!("Y = {} is not strictly positive", bad.1)));
        }
        let gap_of = |idx: &mut dyn Iterator<Item = usize>| {
            let (mut r, mut sx, mut sy, mut c) = (0.0, 0.0, 0.0, 0.0);
            for i in idx {
                let (a, b) = pairs[i];
                r += a / b;
                sx += a;
                sy += b;
                c += 1.0;
            }
            r / c - sx / sy
        };
        let gap = gap_of(&mut (0..pairs.len()));
        let gap_err = stats::batch_jackknife(pairs.len(), BATCHES, |idx| gap_of(&mut idx.iter().copied()));
        rows.push(RatioRow {
            n,
            trials,
            gap,
            gap_err,
        });
    }
    let resolved: Vec<&RatioRow> = rows.iter().filter(|r| r.gap.abs() > 3.0 * r.gap_err).collect();
    let exponent = (resolved.len() >= 2).then(|| {
        let lx: Vec<f64> = resolved.iter().map(|r| (r.n as f64).ln()).collect();
        let ly: Vec<f64> = resolved.iter().map(|r| r.gap.abs().ln()).collect();
        let s: Vec<f64> = resolved.iter().map(|r| r.gap_err / r.gap.abs()).collect();
        stats::weighted_linear_fit(&lx, &ly, &s).into()
    });
    Ok(RatioReport { rows, exponent })
}

/// CSV with columns N, B, C, D, K, NB, N2C, N3K.
pub fn write_moments_csv<W: Write>(report: &MomentReport, mut w: W) -> Result<()> {
    writeln!(w, "N,B,C,D,K,NB,N2C,N3K")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.n, r.b, r.c, r.d, r.k, r.nb, r.n2c, r.n3k
        )?;
    }
    Ok(())
}
