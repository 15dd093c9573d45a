#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: f64 = 16_000.0;

pub fn sine(freq: f64, amp: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / SR).sin()).collect()
}

pub fn noise(amp: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect()
}

/// Harmonic source with a gliding pitch, shaped by two resonances that move over time.
pub fn speech_like(n: usize) -> Vec<f64> {
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / SR;
        let f0 = 140.0 + 30.0 * (2.0 * PI * 1.5 * t).sin();
        phase += 2.0 * PI * f0 / SR;
        let f1 = 600.0 + 200.0 * (2.0 * PI * 2.0 * t).sin();
        let f2 = 1700.0 + 300.0 * (2.0 * PI * 1.2 * t).cos();
        let mut s = 0.0;
        let mut h = 1.0;
        while h * f0 < 7000.0 {
            let f = h * f0;
            let g = (-((f - f1) / 150.0).powi(2)).exp() + 0.5 * (-((f - f2) / 250.0).powi(2)).exp() + 0.02;
            s += g * (h * phase).sin();
            h += 1.0;
        }
        let env = 0.6 + 0.4 * (2.0 * PI * 3.0 * t).sin();
        out.push(0.1 * env * s);
    }
    out
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
