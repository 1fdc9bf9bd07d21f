#![allow(dead_code)]

pub mod grad;
pub mod scenes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spiralx::{FeatureMap, Image};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_map(rng: &mut ChaCha8Rng, c: usize, r: usize, k: usize) -> FeatureMap {
    let data = (0..c * r * k)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    FeatureMap::from_vec(c, r, k, data).unwrap()
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect()
}

/// Values spaced at least 0.01 apart, shuffled, so that max-pool winners
/// cannot swap under a 1e-3 perturbation.
pub fn separated_map(rng: &mut ChaCha8Rng, c: usize, r: usize, k: usize) -> FeatureMap {
    let n = c * r * k;
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, rng.random_range(0..=i));
    }
    let data = ranks
        .iter()
        .map(|&v| (v as f32 - n as f32 / 2.0) * 0.01)
        .collect();
    FeatureMap::from_vec(c, r, k, data).unwrap()
}

/// Random 8-bit-range image with fractional values.
pub fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Image {
    let data: Vec<f32> = (0..3 * rows * cols)
        .map(|_| rng.random_range(0.0f32..=255.0))
        .collect();
    Image::from_map(FeatureMap::from_vec(3, rows, cols, data).unwrap()).unwrap()
}

/// `sum(w * out)` accumulated in f64.
pub fn weighted_sum(out: &[f32], w: &[f64]) -> f64 {
    assert_eq!(out.len(), w.len());
    out.iter().zip(w).map(|(o, w)| *o as f64 * w).sum()
}

/// Central-difference gradient of `loss` at `x`. The divisor is the step
/// that f32 can actually represent, not the nominal `2h`.
pub fn numeric_grad(x: &[f32], h: f32, loss: impl Fn(&[f32]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            xp[i] = orig + h;
            let (up, lp) = (xp[i], loss(&xp));
            xp[i] = orig - h;
            let (down, lm) = (xp[i], loss(&xp));
            xp[i] = orig;
            (lp - lm) / (up as f64 - down as f64)
        })
        .collect()
}

/// `||a - n|| / max(||a||, ||n||)`.
pub fn relative_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (*a as f64 - n).powi(2))
        .sum();
    let na: f64 = analytic.iter().map(|a| (*a as f64).powi(2)).sum();
    let nn: f64 = numeric.iter().map(|n| n.powi(2)).sum();
    let scale = na.sqrt().max(nn.sqrt());
    if scale == 0.0 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}
