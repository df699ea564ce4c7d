//! Synthetic test signals and simple statistics.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Piecewise-frequency sinusoid: one stage per entry of `periods`, each
/// `stage_len` samples, phase continuous across stages. With amplitude 2 and
/// whole cycles per stage every stage has mean 0 and variance 2.
pub fn staged_chirp(periods: &[f64], stage_len: usize, amplitude: f64) -> Vec<f64> {
    let mut phase = 0.0_f64;
    let mut out = Vec::with_capacity(periods.len() * stage_len);
    for &p in periods {
        for _ in 0..stage_len {
            out.push(amplitude * phase.sin());
            phase += 2.0 * PI / p;
        }
    }
    out
}

pub fn add_gaussian_noise<R: Rng + ?Sized>(signal: &[f64], std: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    signal.iter().map(|x| x + normal.sample(rng)).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Pearson correlation; 0 when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Repeats every coefficient `factor` times and trims the leading samples
/// so the result lines up with the last `len` inputs.
pub fn upsample_hold(coeffs: &[f64], factor: usize, len: usize) -> Vec<f64> {
    let full: Vec<f64> = coeffs
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, factor))
        .collect();
    full[full.len().saturating_sub(len)..].to_vec()
}

/// Trailing moving average of width `w` (shorter at the start).
pub fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            mean(&x[lo..=i])
        })
        .collect()
}
