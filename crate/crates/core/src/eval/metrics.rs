use std::f64::consts::{LN_10, PI};

use dvc_dsp::{F0Contour, MelSpectrogram};

use crate::error::CoreError;
use crate::eval::dtw::{dtw, euclidean, Alignment};
use crate::Result;

/// Mel-cepstral coefficients kept per frame (`c₁..c₂₄`; `c₀` is energy).
pub const MCD_ORDER: usize = 24;

/// `(10 / ln 10) · √2`.
pub fn mcd_scale() -> f64 {
    10.0 / LN_10 * 2f64.sqrt()
}

/// Orthonormal DCT-II of one log-mel row.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

/// Coefficients `1..=MCD_ORDER` of every frame.
pub fn mel_cepstra(mel: &MelSpectrogram) -> Vec<Vec<f64>> {
    mel.rows().map(|r| dct_ii(r)[1..=MCD_ORDER.min(r.len() - 1)].to_vec()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mcd {
    pub db: f64,
    pub alignment: Alignment,
}

/// Mean mel-cepstral distortion along the optimal cepstral alignment, in dB.
pub fn mcd(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<Mcd> {
    if a.n_mels() != b.n_mels() {
        return Err(CoreError::Data(format!("mcd: {} vs {} mel bands", a.n_mels(), b.n_mels())));
    }
    let (ca, cb) = (mel_cepstra(a), mel_cepstra(b));
    let alignment = dtw(&ca, &cb, |x, y| euclidean(x, y))?;
    Ok(Mcd { db: mcd_scale() * alignment.mean_cost(), alignment })
}

/// `(frame index, Hz)` of the voiced frames.
fn voiced(f0: &F0Contour) -> Vec<(usize, f64)> {
    f0.values_hz.iter().copied().enumerate().filter(|&(_, v)| v > 0.0).collect()
}

/// RMSE in Hz over the voiced frames of both contours, aligned on log-F0.
/// `None` when either contour has no voiced frame.
pub fn f0_rmse(a: &F0Contour, b: &F0Contour) -> Result<Option<f64>> {
    let (va, vb) = (voiced(a), voiced(b));
    if va.is_empty() || vb.is_empty() {
        return Ok(None);
    }
    let al = dtw(&va, &vb, |x, y| (x.1.ln() - y.1.ln()).abs())?;
    let sq: f64 = al.path.iter().map(|&(i, j)| (va[i].1 - vb[j].1).powi(2)).sum();
    Ok(Some((sq / al.path.len() as f64).sqrt()))
}

/// Total absolute Hz difference along the optimal voiced-frame alignment.
/// `None` when either contour has no voiced frame.
pub fn f0_distance(a: &F0Contour, b: &F0Contour) -> Result<Option<f64>> {
    let (va, vb) = (voiced(a), voiced(b));
    if va.is_empty() || vb.is_empty() {
        return Ok(None);
    }
    Ok(Some(dtw(&va, &vb, |x, y| (x.1 - y.1).abs())?.cost))
}

/// Fraction of aligned frame pairs voiced on both sides.
pub fn covoiced_ratio(al: &Alignment, a: &F0Contour, b: &F0Contour) -> f64 {
    let both = al
        .path
        .iter()
        .filter(|&&(i, j)| a.values_hz.get(i).is_some_and(|&v| v > 0.0) && b.values_hz.get(j).is_some_and(|&v| v > 0.0))
        .count();
    both as f64 / al.path.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn centroid(vs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vs.first().ok_or_else(|| CoreError::Data("centroid of no embeddings".into()))?;
    let mut c = vec![0.0; first.len()];
    for v in vs {
        if v.len() != c.len() {
            return Err(CoreError::Data("embeddings differ in size".into()));
        }
        for (a, b) in c.iter_mut().zip(v) {
            *a += b;
        }
    }
    c.iter_mut().for_each(|a| *a /= vs.len() as f64);
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub cos_target: f64,
    pub cos_source: f64,
    /// `cos_target > cos_source`.
    pub verdict: bool,
}

/// Cosine of `converted` to each side's centroid.
pub fn speaker_similarity(converted: &[f64], target_refs: &[Vec<f64>], source_refs: &[Vec<f64>]) -> Result<Similarity> {
    let cos_target = cosine(converted, &centroid(target_refs)?);
    let cos_source = cosine(converted, &centroid(source_refs)?);
    Ok(Similarity { cos_target, cos_source, verdict: cos_target > cos_source })
}
