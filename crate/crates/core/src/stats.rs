//! Small statistics toolkit: moments, least-squares fits, autocorrelation,
//! convergence diagnostics and batch jackknife errors.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population (biased, 1/n) central moment of order `k`.
pub fn central_moment(x: &[f64], k: i32) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(k)).sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    central_moment(x, 2) * n / (n - 1.0)
}

/// Population covariance ⟨xy⟩ − ⟨x⟩⟨y⟩.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares y = a + b x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_stderr = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Weighted least squares with per-point standard errors `sigma` on `y`.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> LinearFit {
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, w)| w * (a - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((a, b), w)| w * (a - mx) * (b - my))
        .sum();
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: my - slope * mx,
        slope_stderr: (1.0 / sxx).sqrt(),
    }
}

/// Integrated autocorrelation time with Sokal's automatic window (c = 5).
pub fn integrated_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(x);
    let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for t in 1..n / 2 {
        let ct: f64 = x[..n - t]
            .iter()
            .zip(&x[t..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * ct / c0;
        if (t as f64) >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Split-chain potential scale reduction factor R̂.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    let m = halves.len() as f64;
    let len = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = mean(&means);
    let b = len / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves.iter().map(|h| variance(h)).sum::<f64>() / m;
    if w <= 0.0 {
        return 1.0;
    }
    let var_plus = (len - 1.0) / len * w + b / len;
    (var_plus / w).sqrt()
}

/// Kolmogorov–Smirnov distance between the empirical law of standardized
/// `x` and the unit Gaussian.
pub fn ks_distance_to_normal(x: &[f64]) -> f64 {
    let m = mean(x);
    let s = variance(x).sqrt();
    let mut z: Vec<f64> = x.iter().map(|v| (v - m) / s).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    let normal = Normal::standard();
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Split `len` items into `batches` contiguous ranges of near-equal size.
pub fn batch_ranges(len: usize, batches: usize) -> Vec<std::ops::Range<usize>> {
    let batches = batches.clamp(1, len.max(1));
    (0..batches)
        .map(|b| (b * len / batches)..((b + 1) * len / batches))
        .collect()
}

/// Delete-one-batch jackknife standard error of a (possibly nonlinear)
/// statistic evaluated on index subsets.
pub fn batch_jackknife<F>(len: usize, batches: usize, stat: F) -> f64
where
    F: Fn(&[usize]) -> f64,
{
    let ranges = batch_ranges(len, batches);
    let b = ranges.len();
    if b < 2 {
        return f64::NAN;
    }
    let mut idx = Vec::with_capacity(len);
    let estimates: Vec<f64> = ranges
        .iter()
        .map(|skip| {
            idx.clear();
            idx.extend((0..skip.start).chain(skip.end..len));
            stat(&idx)
        })
        .collect();
    let m = mean(&estimates);
    let bf = b as f64;
    ((bf - 1.0) / bf * estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>()).sqrt()
}

/// Batch-means standard error of a plain average.
pub fn batch_means_stderr(x: &[f64], batches: usize) -> f64 {
    let ranges = batch_ranges(x.len(), batches);
    let means: Vec<f64> = ranges.iter().map(|r| mean(&x[r.clone()])).collect();
    (variance(&means) / means.len() as f64).sqrt()
}
