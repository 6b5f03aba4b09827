//! Independent checks of the dense-network core: straight-line arithmetic,
//! central finite differences and a hand-evaluated Adam trace.

use least_core::nn::{AdamState, Gradients, Mlp, OutputActivation};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Plain nested-loop forward pass, written without ndarray products.
fn loop_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let layers = net.weights().len();
    for k in 0..layers {
        let w = &net.weights()[k];
        let b = &net.biases()[k];
        let mut next = vec![0.0; w.ncols()];
        for j in 0..w.ncols() {
            let mut acc = b[j];
            for i in 0..w.nrows() {
                acc += h[i] * w[[i, j]];
            }
            next[j] = if k + 1 < layers {
                acc.max(0.0)
            } else {
                match net.output_activation() {
                    OutputActivation::Identity => acc,
                    OutputActivation::Tanh => acc.tanh(),
                }
            };
        }
        h = next;
    }
    h
}

#[test]
fn seeded_2_4_1_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for output in [OutputActivation::Identity, OutputActivation::Tanh] {
        let net = Mlp::new(&[2, 4, 1], output, &mut rng).unwrap();
        let got = net.forward(&[0.3, 0.7]).unwrap();
        let want = loop_forward(&net, &[0.3, 0.7]);
        assert_eq!(got.len(), 1);
        assert!((got[0] - want[0]).abs() < 1e-14, "{got:?} vs {want:?}");
    }
}

/// Scalar loss used for gradient checks: sum over outputs and rows of c ⊙ y.
fn weighted_sum(net: &Mlp, x: ArrayView2<f64>, c: &Array2<f64>) -> f64 {
    (net.forward_batch(x).unwrap() * c).sum()
}

fn finite_difference(net: &Mlp, x: ArrayView2<f64>, c: &Array2<f64>, h: f64) -> Vec<f64> {
    let base = net.params_flat();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params_flat(&p).unwrap();
            let plus = weighted_sum(&probe, x, c);
            p[i] = base[i] - h;
            probe.set_params_flat(&p).unwrap();
            let minus = weighted_sum(&probe, x, c);
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

fn assert_gradients_close(analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        let ok = (a - n).abs() <= 1e-6 || (a - n).abs() / scale <= 1e-4;
        assert!(ok, "component {i}: analytic {a} vs numeric {n}");
    }
}

#[test]
fn seeded_2_4_1_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = Mlp::new(&[2, 4, 1], OutputActivation::Tanh, &mut rng).unwrap();
    let x = ndarray::array![[0.3, 0.7], [-0.4, 0.9], [1.2, -0.1]];
    let c = ndarray::array![[1.0], [-0.5], [2.0]];
    let trace = net.forward_trace(x.view()).unwrap();
    let (grads, _) = net.backward(&trace, &c).unwrap();
    let numeric = finite_difference(&net, x.view(), &c, 1e-5);
    assert_gradients_close(&grads.to_flat(), &numeric);
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = Mlp::new(&[3, 6, 5, 2], OutputActivation::Tanh, &mut rng).unwrap();
    let x = ndarray::array![[0.2, -0.3, 0.8]];
    let c = ndarray::array![[0.7, -1.3]];
    let trace = net.forward_trace(x.view()).unwrap();
    let (_, dx) = net.backward(&trace, &c).unwrap();
    for i in 0..3 {
        let h = 1e-5;
        let mut xp = x.clone();
        xp[[0, i]] += h;
        let mut xm = x.clone();
        xm[[0, i]] -= h;
        let numeric = (weighted_sum(&net, xp.view(), &c) - weighted_sum(&net, xm.view(), &c)) / (2.0 * h);
        assert!((dx[[0, i]] - numeric).abs() < 1e-7, "{} vs {numeric}", dx[[0, i]]);
    }
}

#[test]
fn adam_constant_gradient_trace() {
    // Frozen from a separate evaluation of the Adam recurrence
    // (lr 1e-3, betas 0.9/0.999, eps 1e-8, grad 0.5, start at 0).
    let expected_params = [
        -0.000999999980000001,
        -0.0019999999599999946,
        -0.002999999939999995,
        -0.003999999919999991,
        -0.00499999989999999,
    ];
    let expected_m5 = 0.204755;
    let expected_v5 = 0.00124750249875025;
    let mut net = Mlp::from_parts(
        vec![ndarray::array![[0.0]]],
        vec![ndarray::array![0.0]],
        OutputActivation::Identity,
    )
    .unwrap();
    let mut adam = AdamState::new(net.dims(), 1e-3);
    let mut g = Gradients::zeros(net.dims());
    g.weights[0][[0, 0]] = 0.5;
    for want in expected_params {
        adam.step(&mut net, &g).unwrap();
        assert!((net.weights()[0][[0, 0]] - want).abs() < 1e-15);
    }
    assert!((adam.first_moment().weights[0][[0, 0]] - expected_m5).abs() < 1e-15);
    assert!((adam.second_moment().weights[0][[0, 0]] - expected_v5).abs() < 1e-15);
}

#[test]
fn forward_is_deterministic_for_a_seed() {
    let make = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        Mlp::new(&[4, 16, 16, 2], OutputActivation::Tanh, &mut rng).unwrap()
    };
    let (a, b) = (make(), make());
    let x = [0.1, -0.2, 0.3, 0.9];
    let ya = a.forward(&x).unwrap();
    let yb = b.forward(&x).unwrap();
    assert_eq!(
        ya.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        yb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_small_nets_pass_gradient_check(
        seed in any::<u64>(),
        dims in prop::collection::vec(1usize..=16, 2..=4),
        tanh in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let output = if tanh { OutputActivation::Tanh } else { OutputActivation::Identity };
        let net = Mlp::new(&dims, output, &mut rng).unwrap();
        let batch = 3;
        let x = Array2::from_shape_fn((batch, dims[0]), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let c = Array2::from_shape_fn((batch, *dims.last().unwrap()), |(i, j)| ((i + 2 * j) as f64 * 0.71).cos());
        let trace = net.forward_trace(x.view()).unwrap();
        let (grads, _) = net.backward(&trace, &c).unwrap();
        let numeric = finite_difference(&net, x.view(), &c, 1e-5);
        // Rectifier kinks make finite differences meaningless for
        // pre-activations within the step of zero; skip such draws.
        let mut h = x.clone();
        let mut near_kink = false;
        for (k, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
            let z = h.dot(w) + b;
            if k + 1 < net.weights().len() {
                near_kink |= z.iter().any(|v| v.abs() < 1e-4);
            }
            h = z.mapv(|v| v.max(0.0));
        }
        prop_assume!(!near_kink);
        let analytic = grads.to_flat();
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let scale = a.abs().max(n.abs());
            prop_assert!((a - n).abs() <= 1e-6 || (a - n).abs() / scale <= 1e-4,
                "component {}: analytic {} vs numeric {}", i, a, n);
        }
    }

    #[test]
    fn adam_zero_gradient_never_moves_parameters(seed in any::<u64>(), steps in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&[3, 5, 2], OutputActivation::Identity, &mut rng).unwrap();
        let before = net.params_flat();
        let mut adam = AdamState::new(net.dims(), 0.1);
        let zero = Gradients::zeros(net.dims());
        for _ in 0..steps {
            adam.step(&mut net, &zero).unwrap();
        }
        prop_assert_eq!(net.params_flat(), before);
    }
}
