use dvc_core::quantizer::{quantize, quantize_graph, Codebook};
use dvc_tensor::init::Initializer;
use dvc_tensor::{Graph, Group, Mode, Tensor};
use proptest::prelude::*;

fn brute_force(z: &[f64], cb: &Codebook) -> usize {
    let dists: Vec<f64> = (0..cb.n_codes())
        .map(|k| cb.code(k).iter().zip(z).map(|(c, v)| (c - v).powi(2)).sum())
        .collect();
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&d| d == min).unwrap()
}

proptest! {
    #[test]
    fn indices_match_exhaustive_search(k in 2usize..=16, d in 1usize..6, rows in 1usize..12, seed in any::<u64>()) {
        let mut init = Initializer::new(seed);
        let cb = Codebook::random(&mut init, k, d).unwrap();
        let z = init.uniform(&[rows, d], 1.5);
        let q = quantize(&z, &cb, 0.25).unwrap();
        for r in 0..rows {
            let want = brute_force(z.row(r), &cb);
            prop_assert_eq!(q.indices[r], want);
            prop_assert_eq!(q.codes.row(r), cb.code(want));
        }
    }

    #[test]
    fn loss_is_the_scaled_mean_squared_distance(k in 2usize..=8, rows in 1usize..8, seed in any::<u64>()) {
        let mut init = Initializer::new(seed);
        let cb = Codebook::random(&mut init, k, 3).unwrap();
        let z = init.uniform(&[rows, 3], 1.0);
        let q = quantize(&z, &cb, 0.25).unwrap();
        let sq: f64 = (0..rows)
            .map(|r| z.row(r).iter().zip(q.codes.row(r)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        prop_assert!((q.vq_loss - 1.25 * sq / rows as f64).abs() < 1e-12);
    }
}

#[test]
fn duplicated_codes_tie_to_the_lowest_index() {
    let cb = Codebook::new(vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 3, 2).unwrap();
    let q = quantize(&Tensor::new(vec![1, 2], vec![0.1, -0.1]).unwrap(), &cb, 0.25).unwrap();
    assert_eq!(q.indices, vec![1]);
}

#[test]
fn straight_through_copies_the_downstream_gradient() {
    let mut init = Initializer::new(3);
    let cb = Codebook::random(&mut init, 6, 4).unwrap();
    let z = init.uniform(&[5, 4], 1.0);
    let w = init.uniform(&[5, 4], 1.0);
    let downstream = |q: &Tensor| -> f64 { q.data().iter().zip(w.data()).map(|(a, b)| (a * b).tanh()).sum() };

    let mut g = Graph::new(Mode::Train, &[Group::Model]);
    let zv = g.leaf(z.clone(), true);
    let (codes, _, _) = quantize_graph(&mut g, zv, &cb, 0.25).unwrap();
    let wv = g.input(w.clone());
    let p = g.mul(codes, wv);
    let t = g.tanh(p);
    let loss = g.sum(t);
    let grads = g.backward(loss).unwrap();
    let dz = grads.get(zv).expect("z receives a gradient");

    // finite differences with the codes themselves as the variable
    let q = quantize(&z, &cb, 0.25).unwrap().codes;
    let h = 1e-5;
    for i in 0..q.numel() {
        let mut up = q.clone();
        up.data_mut()[i] += h;
        let mut dn = q.clone();
        dn.data_mut()[i] -= h;
        let fd = (downstream(&up) - downstream(&dn)) / (2.0 * h);
        let a = dz.data()[i];
        assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-8), "{a} vs {fd}");
    }
}

#[test]
fn commitment_gradient_is_two_beta_times_the_residual() {
    let mut init = Initializer::new(8);
    let cb = Codebook::random(&mut init, 4, 3).unwrap();
    let z = init.uniform(&[6, 3], 1.0);
    let beta = 0.25;
    let mut g = Graph::new(Mode::Train, &[Group::Model]);
    let zv = g.leaf(z.clone(), true);
    let (_, _, loss) = quantize_graph(&mut g, zv, &cb, beta).unwrap();
    let grads = g.backward(loss).unwrap();
    let q = quantize(&z, &cb, beta).unwrap();
    let dz = grads.get(zv).unwrap();
    for ((gz, zi), qi) in dz.data().iter().zip(z.data()).zip(q.codes.data()) {
        assert!((gz - 2.0 * beta * (zi - qi) / 6.0).abs() < 1e-12);
    }
    assert!((g.value(loss).item() - q.vq_loss).abs() < 1e-12);
}

#[test]
fn repeated_ema_updates_converge_geometrically() {
    let mut cb = Codebook::new(vec![0.0, 0.0, 5.0, 5.0], 2, 2).unwrap();
    let c = [0.2, -0.4];
    let z: Vec<f64> = c.iter().chain(&c).chain(&c).copied().collect();
    let n = 3.0;
    let target: Vec<f64> = c.iter().map(|v| v * n / (n + 1e-5)).collect();
    for step in 1..=50 {
        cb.update(&z, &[0, 0, 0], 0.99).unwrap();
        let left = 0.99f64.powi(step);
        for d in 0..2 {
            let want = target[d] * (1.0 - left);
            assert!((cb.code(0)[d] - want).abs() < 1e-12, "step {step}");
        }
        assert_eq!(cb.code(1), &[5.0, 5.0]);
    }
}

#[test]
fn invalid_codebooks_are_rejected() {
    assert!(Codebook::new(vec![0.0, 0.0], 1, 2).is_err());
    assert!(Codebook::new(vec![0.0, f64::NAN, 1.0, 1.0], 2, 2).is_err());
    assert!(Codebook::new(vec![0.0; 3], 2, 2).is_err());
}
