#![allow(dead_code)]

use std::path::Path;

use dvc_core::mi::{club_loglik, club_mi_estimate, VariationalNet};
use dvc_core::pipeline::Manifest;
use dvc_core::synth::{generate, SynthSpec};
use dvc_tensor::init::Initializer;
use dvc_tensor::optim::{AdamConfig, AdamState};
use dvc_tensor::{Graph, Group, Mode, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` draws of a standard bivariate normal with correlation `rho`, as `[n, 1]` columns.
pub fn gaussian_pairs(rho: f64, n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        xs.push(a);
        ys.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    (Tensor::new(vec![n, 1], xs).unwrap(), Tensor::new(vec![n, 1], ys).unwrap())
}

pub struct MiProbe {
    /// vCLUB estimate on a fresh sample.
    pub estimate: f64,
    /// Barber-Agakov lower bound `H(Y) + E log q(y|x)` on the same sample.
    pub lower_bound: f64,
}

/// Fit `q(y|x)` on one sample of size `n` by likelihood ascent, then probe a fresh sample.
pub fn trained_probe(rho: f64, n: usize, seed: u64) -> MiProbe {
    let mut ps = ParamStore::new();
    let mut init = Initializer::new(seed);
    let net = VariationalNet::new(&mut ps, &mut init, "q", 1, 1, 64);
    let mut adam = AdamState::new(AdamConfig::default());
    let (x, y) = gaussian_pairs(rho, n, seed.wrapping_mul(2) + 1);
    for _ in 0..400 {
        let mut g = Graph::new(Mode::Train, &[Group::Estimator]);
        let (xv, yv) = (g.input(x.clone()), g.input(y.clone()));
        let ll = club_loglik(&mut g, &ps, &net, xv, yv).unwrap();
        let loss = g.scale(ll, -1.0);
        let grads = g.backward(loss).unwrap();
        adam.step(&mut ps, &g.param_grads(&grads), 5e-3).unwrap();
    }
    let (x, y) = gaussian_pairs(rho, n, seed.wrapping_mul(2) + 2);
    let mut g = Graph::inference();
    let (xv, yv) = (g.input(x), g.input(y));
    let est = club_mi_estimate(&mut g, &ps, &net, xv, yv).unwrap();
    let ll = club_loglik(&mut g, &ps, &net, xv, yv).unwrap();
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    MiProbe { estimate: g.value(est).item(), lower_bound: entropy + g.value(ll).item() }
}

/// A four-cell corpus of short utterances for pipeline tests.
pub fn tiny_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_speakers: 2,
        n_styles: 2,
        train_per_cell: 3,
        val_per_cell: 1,
        test_per_cell: 1,
        utt_len_s: 0.4,
        seed,
    }
}

pub fn tiny_corpus(dir: &Path) -> Manifest {
    generate(&tiny_spec(5), dir).unwrap()
}

/// Every monotone path cost from `(0,0)` to the far corner, by explicit enumeration.
pub fn brute_force_dtw(d: &[Vec<f64>]) -> f64 {
    fn walk(d: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + d[i][j];
        let (n, m) = (d.len(), d[0].len());
        if i == n - 1 && j == m - 1 {
            *best = best.min(acc);
            return;
        }
        if i + 1 < n {
            walk(d, i + 1, j, acc, best);
        }
        if j + 1 < m {
            walk(d, i, j + 1, acc, best);
        }
        if i + 1 < n && j + 1 < m {
            walk(d, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(d, 0, 0, 0.0, &mut best);
    best
}
