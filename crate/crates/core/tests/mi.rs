mod common;

use std::f64::consts::PI;

use common::{gaussian_pairs, trained_probe};
use dvc_core::mi::{club_loglik, club_mi_estimate, mi_loss, MiEstimators, Pair, Rep, FrameReps, VariationalNet};
use dvc_core::MiWeights;
use dvc_tensor::init::Initializer;
use dvc_tensor::{Graph, ParamStore, Tensor};
use proptest::prelude::*;

/// A net whose mean is the constant `mu` and whose log-variance is the constant `lv`.
fn constant_net(mu: &[f64], lv: f64) -> (ParamStore, VariationalNet) {
    let mut ps = ParamStore::new();
    let net = VariationalNet::new(&mut ps, &mut Initializer::new(0), "q", 2, mu.len(), 4);
    for id in ps.ids().collect::<Vec<_>>() {
        let name = ps.entry(id).name.clone();
        let t = ps.get_mut(id);
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        if name == "q.mu.1.bias" {
            t.data_mut().copy_from_slice(mu);
        } else if name == "q.logvar.1.bias" {
            t.data_mut().iter_mut().for_each(|v| *v = lv);
        }
    }
    (ps, net)
}

fn loglik_of(ps: &ParamStore, net: &VariationalNet, y: Vec<f64>, n: usize) -> f64 {
    let d = y.len() / n;
    let mut g = Graph::inference();
    let x = g.input(Tensor::zeros(&[n, 2]));
    let yv = g.input(Tensor::new(vec![n, d], y).unwrap());
    let ll = club_loglik(&mut g, ps, net, x, yv).unwrap();
    g.value(ll).item()
}

#[test]
fn density_at_the_mean_with_unit_variance() {
    let mu = [0.5, -1.0, 2.0];
    let (ps, net) = constant_net(&mu, 0.0);
    let ll = loglik_of(&ps, &net, mu.repeat(4), 4);
    assert!((ll + 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
}

#[test]
fn unit_error_costs_one_half() {
    let (ps, net) = constant_net(&[0.0, 0.0, 0.0], 0.0);
    let at_mean = loglik_of(&ps, &net, vec![0.0; 6], 2);
    let off = loglik_of(&ps, &net, [1.0, 0.0, 0.0].repeat(2), 2);
    assert!((at_mean - off - 0.5).abs() < 1e-12);
}

#[test]
fn variance_sensitivity_follows_the_closed_form() {
    // per dimension: −½(ln 2π + lv + e² e^{−lv}); derivative in lv is −½(1 − e² e^{−lv})
    let e = 1.7f64;
    let at = |lv: f64| {
        let (ps, net) = constant_net(&[0.0], lv);
        loglik_of(&ps, &net, vec![e, -e], 2)
    };
    for lv in [-1.0, 0.0, 0.5, 2.0] {
        let want = -0.5 * ((2.0 * PI).ln() + lv + e * e * (-lv as f64).exp());
        assert!((at(lv) - want).abs() < 1e-12);
        let slope = (at(lv + 1e-6) - at(lv - 1e-6)) / 2e-6;
        assert!((slope + 0.5 * (1.0 - e * e * (-lv as f64).exp())).abs() < 1e-6);
    }
    // for e² > 1 widening helps until σ² = e²
    assert!(at(0.5) > at(0.0));
    assert!(at(2.0 * e.ln() + 0.5) < at(2.0 * e.ln()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn moment_form_equals_the_pairwise_double_sum(n in 2usize..9, dy in 1usize..4, seed in any::<u64>()) {
        let mut init = Initializer::new(seed);
        let mut ps = ParamStore::new();
        let net = VariationalNet::new(&mut ps, &mut init, "q", 2, dy, 5);
        let x = init.uniform(&[n, 2], 1.0);
        let y = init.uniform(&[n, dy], 2.0);
        let mut g = Graph::inference();
        let (xv, yv) = (g.input(x.clone()), g.input(y.clone()));
        let est = club_mi_estimate(&mut g, &ps, &net, xv, yv).unwrap();
        let est = g.value(est).item();
        let (mu, lv) = net.forward(&mut g, &ps, xv).unwrap();
        let (mu, lv) = (g.value(mu).clone(), g.value(lv).clone());
        let logq = |i: usize, j: usize| -> f64 {
            (0..dy)
                .map(|d| {
                    let (m, l) = (mu.row(i)[d], lv.row(i)[d]);
                    -0.5 * ((2.0 * PI).ln() + l + (y.row(j)[d] - m).powi(2) * (-l).exp())
                })
                .sum()
        };
        let mut want = 0.0;
        for i in 0..n {
            let neg: f64 = (0..n).map(|j| logq(i, j)).sum::<f64>() / n as f64;
            want += logq(i, i) - neg;
        }
        want /= n as f64;
        prop_assert!((est - want).abs() < 1e-9 * want.abs().max(1.0), "{est} vs {want}");
    }
}

#[test]
fn independent_pairs_give_near_zero() {
    let mean: f64 = (0..5).map(|s| trained_probe(0.0, 1024, s).estimate).sum::<f64>() / 5.0;
    assert!(mean.abs() < 0.1, "{mean}");
}

#[test]
fn correlated_pairs_clear_the_floor_and_the_lower_bound() {
    let p = trained_probe(0.8, 1024, 11);
    assert!(p.estimate >= 0.45, "{}", p.estimate);
    assert!(p.estimate >= p.lower_bound, "{} < {}", p.estimate, p.lower_bound);
    // the lower bound itself sits near the analytic value
    assert!((p.lower_bound - 0.5108).abs() < 0.1, "{}", p.lower_bound);
}

#[test]
fn estimates_grow_with_correlation() {
    let at = |rho: f64| (0..3).map(|s| trained_probe(rho, 1024, 40 + s).estimate).sum::<f64>() / 3.0;
    let (a, b, c) = (at(0.2), at(0.5), at(0.8));
    assert!(a < b && b < c, "{a} {b} {c}");
}

#[test]
fn sample_draws_have_the_requested_correlation() {
    let (x, y) = gaussian_pairs(0.8, 20_000, 1);
    let r: f64 = x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum::<f64>() / 20_000.0;
    assert!((r - 0.8).abs() < 0.02);
}

fn six_reps(g: &mut Graph, n: usize, seed: u64) -> FrameReps {
    let mut init = Initializer::new(seed);
    FrameReps {
        style: g.input(init.uniform(&[n, 3], 1.0)),
        speaker: g.input(init.uniform(&[n, 2], 1.0)),
        content: g.input(init.uniform(&[n, 4], 1.0)),
        pitch: g.input(init.uniform(&[n, 1], 1.0)),
    }
}

fn dims(r: Rep) -> usize {
    match r {
        Rep::Style => 3,
        Rep::Speaker => 2,
        Rep::Content => 4,
        Rep::Pitch => 1,
    }
}

#[test]
fn weighted_penalty_is_the_dot_product_of_estimates() {
    let mut ps = ParamStore::new();
    let est = MiEstimators::new(&mut ps, &mut Initializer::new(2), dims, 6);
    let mut g = Graph::inference();
    let reps = six_reps(&mut g, 7, 9);
    let e = est.estimates(&mut g, &ps, &reps).unwrap();
    let w = MiWeights { sp: 0.3, sc: 1.5, sf: 0.0, pc: 2.0, pf: 0.7, cf: 0.1 };
    let vals: Vec<f64> = e.iter().map(|&v| g.value(v).item()).collect();
    let want: f64 = vals.iter().zip(w.as_array()).map(|(a, b)| a * b).sum();
    let l = mi_loss(&mut g, &e, &w, false).unwrap();
    let got = g.value(l).item();
    assert!((got - want).abs() < 1e-12);

    let clamped: f64 = vals.iter().zip(w.as_array()).map(|(a, b)| a.max(0.0) * b).sum();
    let l = mi_loss(&mut g, &e, &w, true).unwrap();
    let got = g.value(l).item();
    assert!((got - clamped).abs() < 1e-12);
}

#[test]
fn a_single_weight_reduces_to_that_pair() {
    let mut ps = ParamStore::new();
    let est = MiEstimators::new(&mut ps, &mut Initializer::new(2), dims, 6);
    let mut g = Graph::inference();
    let reps = six_reps(&mut g, 5, 4);
    let e = est.estimates(&mut g, &ps, &reps).unwrap();
    let w = MiWeights { sp: 1.0, ..MiWeights::uniform(0.0) };
    let l = mi_loss(&mut g, &e, &w, false).unwrap();
    let net = est.net(Pair::StyleSpeaker).unwrap();
    let direct = club_mi_estimate(&mut g, &ps, net, reps.style, reps.speaker).unwrap();
    assert_eq!(g.value(l).item(), g.value(direct).item());
}

#[test]
fn misaligned_frames_are_rejected() {
    let mut ps = ParamStore::new();
    let est = MiEstimators::new(&mut ps, &mut Initializer::new(2), dims, 6);
    let mut g = Graph::inference();
    let mut reps = six_reps(&mut g, 5, 4);
    reps.pitch = g.input(Tensor::zeros(&[4, 1]));
    assert!(est.estimates(&mut g, &ps, &reps).is_err());
    assert!(est.total_loglik(&mut g, &ps, &reps).is_err());
}
