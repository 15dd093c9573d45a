//! Adam with bias correction, and the warm-up + step-decay learning-rate schedule.

use crate::error::TensorError;
use crate::graph::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    /// Indexed by `ParamId::index()`; `None` until the parameter first receives a gradient.
    pub moments: Vec<Option<Moments>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    /// One update over every `(param, grad)` pair. `step_count` advances once.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<(), TensorError> {
        for (id, g) in grads {
            let p = store.get(*id);
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    layer: format!("adam:{}", store.entry(*id).name),
                    expected: format!("{:?}", p.shape()),
                    got: g.shape().to_vec(),
                });
            }
        }
        self.step_count += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, g) in grads {
            let idx = id.index();
            if self.moments.len() <= idx {
                self.moments.resize(idx + 1, None);
            }
            let n = g.numel();
            let m = self.moments[idx].get_or_insert_with(|| Moments {
                first: vec![0.0; n],
                second: vec![0.0; n],
            });
            let p = store.get_mut(*id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * gi;
                m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * gi * gi;
                let mhat = m.first[i] / c1;
                let vhat = m.second[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// `lr(e) = base · min(1, (e+1)/warmup) · 0.5^floor(e/halve_every)` for zero-based epoch `e`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub halve_every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_epochs: 15,
            halve_every: 100,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let warm = if self.warmup_epochs == 0 {
            1.0
        } else {
            ((epoch + 1) as f64 / self.warmup_epochs as f64).min(1.0)
        };
        let halvings = if self.halve_every == 0 { 0 } else { epoch / self.halve_every };
        self.base_lr * warm * 0.5f64.powi(halvings as i32)
    }
}
