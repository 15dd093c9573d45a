//! Vector-quantization bottleneck.

use dvc_tensor::init::Initializer;
use dvc_tensor::{Graph, Tensor, Var};

use crate::error::CoreError;
use crate::Result;

pub const DEFAULT_BETA: f64 = 0.25;
pub const DEFAULT_DECAY: f64 = 0.99;
const COUNT_EPS: f64 = 1e-5;

/// `K × D` code vectors plus moving-average usage counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    vectors: Vec<f64>,
    n_codes: usize,
    dim: usize,
    /// Decayed per-code assignment counts.
    pub ema_counts: Vec<f64>,
}

impl Codebook {
    pub fn new(vectors: Vec<f64>, n_codes: usize, dim: usize) -> Result<Self> {
        if n_codes < 2 {
            return Err(CoreError::Config(format!("codebook needs at least 2 codes, got {n_codes}")));
        }
        if vectors.len() != n_codes * dim {
            return Err(CoreError::Data(format!(
                "codebook data has {} values, expected {}x{}",
                vectors.len(),
                n_codes,
                dim
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numeric("codebook entry".into()));
        }
        Ok(Self { vectors, n_codes, dim, ema_counts: vec![0.0; n_codes] })
    }

    /// Seeded uniform initialization in `±1/K`.
    pub fn random(init: &mut Initializer, n_codes: usize, dim: usize) -> Result<Self> {
        let t = init.uniform(&[n_codes, dim], 1.0 / n_codes as f64);
        Self::new(t.into_data(), n_codes, dim)
    }

    pub fn n_codes(&self) -> usize {
        self.n_codes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn code(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the nearest code in squared Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.n_codes {
            let d: f64 = self.code(k).iter().zip(z).map(|(c, v)| (c - v) * (c - v)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    fn check_dim(&self, width: usize) -> Result<()> {
        if width != self.dim {
            return Err(CoreError::Data(format!("quantize: input dim {width}, codebook dim {}", self.dim)));
        }
        Ok(())
    }

    /// Moving-average update of every code that received frames; others stay put.
    ///
    /// `z` holds `indices.len()` rows of width `dim`.
    pub fn update(&mut self, z: &[f64], indices: &[usize], decay: f64) -> Result<()> {
        self.check_dim(if indices.is_empty() { self.dim } else { z.len() / indices.len() })?;
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.n_codes) {
            return Err(CoreError::Data(format!("code index {bad} out of range")));
        }
        let counts = batch_counts(indices, self.n_codes);
        let mut sums = vec![0.0; self.vectors.len()];
        for (row, &k) in z.chunks(self.dim).zip(indices) {
            for (s, v) in sums[k * self.dim..(k + 1) * self.dim].iter_mut().zip(row) {
                *s += v;
            }
        }
        for k in 0..self.n_codes {
            self.ema_counts[k] = decay * self.ema_counts[k] + (1.0 - decay) * counts[k] as f64;
            if counts[k] == 0 {
                continue;
            }
            let n = counts[k] as f64 + COUNT_EPS;
            for d in 0..self.dim {
                let i = k * self.dim + d;
                self.vectors[i] = decay * self.vectors[i] + (1.0 - decay) * sums[i] / n;
            }
        }
        Ok(())
    }
}

/// Per-code assignment counts of one batch; they sum to `indices.len()`.
pub fn batch_counts(indices: &[usize], n_codes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_codes];
    for &k in indices {
        counts[k] += 1;
    }
    counts
}

/// Entropy in nats of the empirical code distribution.
pub fn usage_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    /// Same shape as the input, rows replaced by their codes.
    pub codes: Tensor,
    pub indices: Vec<usize>,
    /// `‖sg(z) − q‖² + β‖z − sg(q)‖²`, summed over the code dimension, mean over frames.
    pub vq_loss: f64,
}

pub fn quantize(z: &Tensor, cb: &Codebook, beta: f64) -> Result<Quantized> {
    cb.check_dim(z.last_dim())?;
    let mut codes = Vec::with_capacity(z.numel());
    let mut indices = Vec::with_capacity(z.rows());
    let mut sq = 0.0;
    for r in 0..z.rows() {
        let row = z.row(r);
        let k = cb.nearest(row);
        indices.push(k);
        let c = cb.code(k);
        sq += row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        codes.extend_from_slice(c);
    }
    let frames = z.rows().max(1) as f64;
    Ok(Quantized {
        codes: Tensor::new(z.shape().to_vec(), codes)?,
        indices,
        vq_loss: (1.0 + beta) * sq / frames,
    })
}

/// Graph form of [`quantize`]: returns the straight-through codes, the indices
/// and the loss node. The codebook enters as a constant, so the loss gradient
/// reaching `z` is the commitment part `2β(z − q)` only.
pub fn quantize_graph(g: &mut Graph, z: Var, cb: &Codebook, beta: f64) -> Result<(Var, Vec<usize>, Var)> {
    let q = quantize(g.value(z), cb, beta)?;
    let codes = g.straight_through(z, q.codes.clone());
    let qc = g.input(q.codes);
    let diff = g.sub(z, qc);
    let sq = g.square(diff);
    let per_frame = g.sum_last(sq);
    let commit = g.mean(per_frame);
    let commit = g.scale(commit, beta);
    // codebook term: same value, no gradient
    let loss = g.add_scalar(commit, q.vq_loss / (1.0 + beta));
    Ok((codes, q.indices, loss))
}
