// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;

use gradcore::{
    frobenius_distance, kl_divergence, Adam, AdamConfig, Checkpoint, LogBase, ParamStore,
    ProbVector, Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_store(rng: &mut ChaCha8Rng, ns: &str, dims: &[(usize, usize)]) -> ParamStore<f64> {
    let mut p = ParamStore::new(ns);
    for (i, &(r, c)) in dims.iter().enumerate() {
        let w: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..r).map(|_| rng.gen_range(-0.5..0.5)).collect();
        p.insert(format!("w{i}"), Tensor::new(vec![r, c], w).unwrap());
        p.insert(format!("b{i}"), Tensor::vector(b));
    }
    p
}

/// relu(W0 x + b0), optionally hooked, then W1 h + b1 and cross-entropy.
fn two_layer(
    p: &ParamStore<f64>,
    x: &[f64],
    hooks: &[(usize, f64)],
    target: usize,
) -> (Tape<f64>, gradcore::Var, gradcore::Var) {
    let mut t = Tape::new();
    let xi = t.input(Tensor::vector(x.to_vec()));
    let (w0, b0) = (t.param(p, "w0").unwrap(), t.param(p, "b0").unwrap());
    let (w1, b1) = (t.param(p, "w1").unwrap(), t.param(p, "b1").unwrap());
    let h = t.affine(w0, xi, b0).unwrap();
    let h = t.relu(h);
    let h = t.intervene(h, hooks).unwrap();
    let y = t.affine(w1, h, b1).unwrap();
    let l = t.cross_entropy(y, target).unwrap();
    (t, y, l)
}

/// Scalar-by-scalar recomputation of the same network.
fn hand_run(p: &ParamStore<f64>, x: &[f64], hooks: &[(usize, f64)]) -> Vec<f64> {
    let w0 = p.get("w0").unwrap();
    let b0 = p.get("b0").unwrap().data();
    let w1 = p.get("w1").unwrap();
    let b1 = p.get("b1").unwrap().data();
    let (h_n, in_n) = (w0.shape()[0], w0.shape()[1]);
    let mut h = vec![0.0; h_n];
    for i in 0..h_n {
        let mut s = 0.0;
        for j in 0..in_n {
            s += w0.data()[i * in_n + j] * x[j];
        }
        s += b0[i];
        h[i] = if s > 0.0 { s } else { 0.0 };
    }
    for &(i, v) in hooks {
        h[i] = v;
    }
    let out_n = w1.shape()[0];
    let mut y = vec![0.0; out_n];
    for i in 0..out_n {
        let mut s = 0.0;
        for j in 0..h_n {
            s += w1.data()[i * h_n + j] * h[j];
        }
        y[i] = s + b1[i];
    }
    y
}

#[test]
fn hooked_two_layer_matches_hand_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_store(&mut rng, "net", &[(6, 4), (3, 6)]);
    let x = [0.3, -1.2, 0.8, 0.05];
    let hooks = [(2, 0.67)];
    let (t, y, _) = two_layer(&p, &x, &hooks, 0);
    let expect = hand_run(&p, &x, &hooks);
    for (a, b) in t.value(y).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let (t0, y0, _) = two_layer(&p, &x, &[], 0);
    assert_ne!(t0.value(y0).data(), t.value(y).data());
}

#[test]
fn empty_hooks_and_self_intervention_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_store(&mut rng, "net", &[(8, 5), (3, 8)]);
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (t, y, _) = two_layer(&p, &x, &[], 1);
    let plain = t.value(y).clone();

    // Capture native hidden activations and freeze every one at itself.
    let mut tc = Tape::new();
    let xi = tc.input(Tensor::vector(x.clone()));
    let w0 = tc.param(&p, "w0").unwrap();
    let b0 = tc.param(&p, "b0").unwrap();
    let h = tc.affine(w0, xi, b0).unwrap();
    let h = tc.relu(h);
    let native: Vec<(usize, f64)> = tc.value(h).data().iter().copied().enumerate().collect();
    let (t2, y2, _) = two_layer(&p, &x, &native, 1);
    assert_eq!(plain.data(), t2.value(y2).data());
    for v in plain.data() {
        assert_eq!(v.to_bits(), v.to_bits());
    }
}

fn central_difference_check(p: &ParamStore<f64>, x: &[f64], hooks: &[(usize, f64)], target: usize) {
    let (t, _, l) = two_layer(p, x, hooks, target);
    let grads = t.backward(l).unwrap();
    let h = 1e-5;
    for name in p.names() {
        let g = grads.param("net", name).unwrap();
        for k in 0..g.len() {
            let mut plus = p.clone();
            plus.get_mut(name).unwrap().data_mut()[k] += h;
            let mut minus = p.clone();
            minus.get_mut(name).unwrap().data_mut()[k] -= h;
            let (tp, _, lp) = two_layer(&plus, x, hooks, target);
            let (tm, _, lm) = two_layer(&minus, x, hooks, target);
            let fd = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
            let an = g.data()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            assert!(rel < 1e-4, "{name}[{k}]: analytic {an} vs fd {fd}");
        }
    }
}

#[test]
fn random_two_layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..10 {
        let p = random_store(&mut rng, "net", &[(7, 4), (3, 7)]);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let hooks = if trial % 2 == 0 { vec![] } else { vec![(1, 0.4), (5, 0.0)] };
        central_difference_check(&p, &x, &hooks, trial % 3);
    }
}

#[test]
fn kl_walkthrough_values_in_base_ten() {
    let p = ProbVector::<f64>::new(vec![0.10, 0.82, 0.08]).unwrap();
    let q = ProbVector::new(vec![0.20, 0.65, 0.15]).unwrap();
    let ts = kl_divergence(&p, &q, LogBase::Ten).unwrap();
    assert!((ts - 0.0307).abs() < 5e-4, "{ts}");
    let p = ProbVector::<f64>::new(vec![0.56, 0.24, 0.20]).unwrap();
    let q = ProbVector::new(vec![0.36, 0.33, 0.31]).unwrap();
    let iit = kl_divergence(&p, &q, LogBase::Ten).unwrap();
    assert!((iit - 0.0361).abs() < 5e-4, "{iit}");
}

#[test]
fn kl_natural_base_matches_direct_summation() {
    let direct = |p: &[f64], q: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..p.len() {
            s += p[i] * (p[i] / q[i]).ln();
        }
        s
    };
    let cases = [
        ([0.10, 0.82, 0.08], [0.20, 0.65, 0.15], 0.0710),
        ([0.56, 0.24, 0.20], [0.36, 0.33, 0.31], 0.0833),
    ];
    for (p, q, frozen) in cases {
        let d = direct(&p, &q);
        assert!((d - frozen).abs() < 5e-4);
        let got = kl_divergence(
            &ProbVector::new(p.to_vec()).unwrap(),
            &ProbVector::new(q.to_vec()).unwrap(),
            LogBase::Natural,
        )
        .unwrap();
        assert!((got - d).abs() < 1e-12);
    }
}

#[test]
fn kl_is_asymmetric() {
    let p = ProbVector::<f64>::new(vec![0.10, 0.82, 0.08]).unwrap();
    let q = ProbVector::new(vec![0.20, 0.65, 0.15]).unwrap();
    let a = kl_divergence(&p, &q, LogBase::Natural).unwrap();
    let b = kl_divergence(&q, &p, LogBase::Natural).unwrap();
    assert!((a - b).abs() > 1e-3);
}

#[test]
fn kl_tape_gradient_matches_finite_differences() {
    let p = [0.2, 0.5, 0.3];
    let z0 = [0.4, -1.0, 0.7];
    let eval = |z: &[f64]| {
        let mut t = Tape::new();
        let pv = t.input(Tensor::vector(p.to_vec()));
        let zv = t.variable(Tensor::vector(z.to_vec()));
        let q = t.softmax(zv).unwrap();
        let l = t.kl(pv, q, LogBase::Natural).unwrap();
        let g = t.backward(l).unwrap().wrt(zv).unwrap().clone();
        (t.value(l).item(), g)
    };
    let (_, g) = eval(&z0);
    for k in 0..3 {
        let mut a = z0;
        a[k] += 1e-5;
        let mut b = z0;
        b[k] -= 1e-5;
        let fd = (eval(&a).0 - eval(&b).0) / 2e-5;
        assert!((fd - g.data()[k]).abs() < 1e-8);
    }
}

#[test]
fn frobenius_squares_decompose_over_tensors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_store(&mut rng, "a", &[(4, 3), (2, 4)]);
    let b = random_store(&mut rng, "a", &[(4, 3), (2, 4)]);
    let d = frobenius_distance(&a, &b).unwrap();
    let per_tensor: f64 = a
        .iter()
        .zip(b.iter())
        .map(|((_, x), (_, y))| {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
        })
        .sum();
    assert!((d * d - per_tensor).abs() < 1e-12);

    let mut c = random_store(&mut rng, "a", &[(4, 3)]);
    assert!(frobenius_distance(&a, &c).is_err());
    c.insert("w1", Tensor::zeros(&[2, 4]));
    c.insert("b1", Tensor::zeros(&[3]));
    assert!(frobenius_distance(&a, &c).is_err());
}

#[test]
fn adam_converges_on_convex_quadratic() {
    // f(x) = ½ Σ aᵢ (xᵢ - cᵢ)²
    let a = [1.0, 3.0, 0.5, 2.0];
    let c = [0.5, -1.0, 2.0, 0.0];
    let mut p = ParamStore::new("q");
    p.insert("x", Tensor::vector(vec![0.0; 4]));
    // Default betas stall around 1e-5 here; a shorter first-moment memory
    // lets the iterate settle.
    let mut opt = Adam::new(AdamConfig {
        lr: 0.1,
        beta1: 0.5,
        ..AdamConfig::default()
    });
    let grad = |x: &[f64]| -> Vec<f64> { (0..4).map(|i| a[i] * (x[i] - c[i])).collect() };
    for _ in 0..200 {
        let g = grad(p.get("x").unwrap().data());
        let gm = HashMap::from([("x".to_string(), Tensor::vector(g))]);
        opt.step(&mut p, &gm).unwrap();
    }
    let g = grad(p.get("x").unwrap().data());
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "gradient norm {norm}");
}

#[test]
fn checkpoint_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_store(&mut rng, "enc", &[(3, 2)]);
    let mut ck = Checkpoint::new().with_meta("seed", "9");
    ck.add_store(&a);
    let dir = std::env::temp_dir().join(format!("gradcore-ck-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("a.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.meta("seed"), Some("9"));
    let mut restored = random_store(&mut rng, "enc", &[(3, 2)]);
    back.restore_store(&mut restored).unwrap();
    assert_eq!(restored.fingerprint(), a.fingerprint());
    std::fs::remove_dir_all(dir).ok();
}

fn prob_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, 2..6).prop_map(|z| gradcore::tensor::softmax(&z))
}

proptest! {
    #[test]
    fn softmax_always_yields_valid_prob_vector(z in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = ProbVector::from_logits(&z);
        prop_assert!(p.is_ok());
    }

    #[test]
    fn kl_is_non_negative(p in prob_vec(), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let q = gradcore::tensor::softmax(&z);
        let (Ok(p), Ok(q)) = (ProbVector::new(p), ProbVector::new(q)) else { return Ok(()) };
        let kl = kl_divergence(&p, &q, LogBase::Natural).unwrap();
        prop_assert!(kl >= -1e-15);
    }

    #[test]
    fn checkpoint_bytes_round_trip_bit_exact(
        values in prop::collection::vec(any::<f64>(), 0..40),
        name in "[a-z/._]{1,12}",
    ) {
        let mut ck = Checkpoint::new().with_meta("format", "x");
        let n = values.len();
        ck.tensors.push((name, Tensor::new(vec![n], values).unwrap()));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back.tensors.len(), 1);
        let (a, b) = (&ck.tensors[0].1, &back.tensors[0].1);
        prop_assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn f32_engine_agrees_with_f64() {
    let mut t32 = Tape::<f32>::new();
    let x = t32.variable(Tensor::vector(vec![1.0f32, -2.0]));
    let s = t32.softmax(x).unwrap();
    let p = t32.pick(s, 0).unwrap();
    let g32 = t32.backward(p).unwrap().wrt(x).unwrap().clone();

    let mut t64 = Tape::<f64>::new();
    let x = t64.variable(Tensor::vector(vec![1.0f64, -2.0]));
    let s = t64.softmax(x).unwrap();
    let p = t64.pick(s, 0).unwrap();
    let g64 = t64.backward(p).unwrap().wrt(x).unwrap().clone();
    for (a, b) in g32.data().iter().zip(g64.data()) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
}
