//! One-dimensional Gaussian kernel density estimation.

use std::f64::consts::PI;

/// Number of evaluation points used to locate the density mode.
pub const MODE_GRID_POINTS: usize = 512;

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

fn std_dev(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(samples);
    (samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
/// Falls back to the standard deviation when the IQR vanishes; returns 0
/// for constant data.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = std_dev(samples);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

pub fn density(samples: &[f64], bandwidth: f64, x: f64) -> f64 {
    let inv = 1.0 / bandwidth;
    let sum: f64 = samples
        .iter()
        .map(|v| {
            let z = (x - v) * inv;
            (-0.5 * z * z).exp()
        })
        .sum();
    sum * inv / (samples.len() as f64 * (2.0 * PI).sqrt())
}

/// Location of the highest density on `grid_points` evenly spaced points
/// spanning the data. Ties keep the lowest coordinate. Constant data (or a
/// zero bandwidth) returns the sample mean.
pub fn density_mode(samples: &[f64], bandwidth: f64, grid_points: usize) -> f64 {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(bandwidth > 0.0) || hi <= lo || grid_points < 2 {
        return mean(samples);
    }
    let step = (hi - lo) / (grid_points - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..grid_points {
        let x = lo + step * i as f64;
        let f = density(samples, bandwidth, x);
        if f > best.1 {
            best = (x, f);
        }
    }
    best.0
}
