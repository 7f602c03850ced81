mod common;

use common::{one_hot_inputs, oracle_step, random_inputs, random_net, random_targets};
use folkgen_core::gru::{
    backward_sequence, check_gradient_against, forward_sequence, gradient_check, gru_step,
    nll_and_gradient, sequence_nll, GradCheckOptions, GruError, GruNetwork, NetworkDims,
    NetworkState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn zero_network_is_uniform() {
    let net = GruNetwork::<f64>::zeros(NetworkDims::uniform(4, 6, 5));
    let (state, probs, cache) =
        gru_step(&net, &net.initial_state(), &[1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    assert!(state.h.iter().flatten().all(|&h| h == 0.0));
    assert!(cache
        .layers
        .iter()
        .all(|l| l.z.iter().chain(&l.r).all(|&g| g == 0.5)));
    assert!(cache
        .layers
        .iter()
        .all(|l| l.h_tilde.iter().all(|&v| v == 0.0)));
}

#[test]
fn saturated_update_gate_preserves_state() {
    let mut net = random_net(NetworkDims::uniform(3, 5, 4), 3, 0.5);
    for l in &mut net.layers {
        l.b_z.iter_mut().for_each(|b| *b = 50.0);
    }
    let h0 = net.initial_state();
    let inputs = random_inputs(3, 20, 4);
    let (_, tape) = forward_sequence(&net, &inputs).unwrap();
    for step in &tape.steps {
        for (l, h) in step.layers.iter().zip(&h0.h) {
            for (a, b) in l.h.iter().zip(h) {
                assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn oracle_equivalence_on_random_instances() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let dims = NetworkDims::new(
            rng.random_range(1..7),
            (0..3).map(|_| rng.random_range(1..9)).collect(),
            rng.random_range(2..8),
        );
        let net = random_net(dims.clone(), seed, 1.0);
        let state = NetworkState {
            h: dims
                .hidden
                .iter()
                .map(|&h| (0..h).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        };
        let x: Vec<f64> = (0..dims.input)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let (new_state, probs, _) = gru_step(&net, &state, &x).unwrap();
        let (oh, op) = oracle_step(&net, &state.h, &x);
        for (a, b) in new_state.h.iter().flatten().zip(oh.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in probs.iter().zip(&op) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn length_one_sequence_matches_single_step() {
    let net = random_net(NetworkDims::uniform(3, 4, 5), 9, 0.7);
    let x = random_inputs(3, 1, 10);
    let (probs, tape) = forward_sequence(&net, &x).unwrap();
    let (_, p, _) = gru_step(&net, &net.initial_state(), &x[0]).unwrap();
    assert_eq!(probs[0], p);
    assert_eq!(tape.len(), 1);
}

#[test]
fn order_of_inputs_matters() {
    let net = random_net(NetworkDims::uniform(3, 4, 5), 11, 0.7);
    let x = random_inputs(3, 2, 12);
    let swapped = vec![x[1].clone(), x[0].clone()];
    let (a, _) = forward_sequence(&net, &x).unwrap();
    let (b, _) = forward_sequence(&net, &swapped).unwrap();
    assert_ne!(a[1], b[1]);
}

#[test]
fn nll_edge_cases() {
    let net = GruNetwork::<f64>::zeros(NetworkDims::uniform(2, 3, 7));
    let inputs = random_inputs(2, 5, 1);
    let nll = sequence_nll(&net, &inputs, &[0, 1, 2, 3, 6]).unwrap();
    assert!((nll - 7f64.ln()).abs() < 1e-14);

    // Two outputs, equal logits: p(target) = 0.5.
    let net2 = GruNetwork::<f64>::zeros(NetworkDims::uniform(1, 2, 2));
    let nll = sequence_nll(&net2, &[vec![1.0]], &[1]).unwrap();
    assert!((nll - 2f64.ln()).abs() < 1e-15);

    // Recomputed from the returned distributions.
    let net3 = random_net(NetworkDims::uniform(3, 4, 6), 5, 0.8);
    let inputs = random_inputs(3, 9, 6);
    let targets = random_targets(6, 9, 7);
    let (probs, _) = forward_sequence(&net3, &inputs).unwrap();
    let oracle = -probs
        .iter()
        .zip(&targets)
        .map(|(p, &t)| p[t].ln())
        .sum::<f64>()
        / 9.0;
    assert!((sequence_nll(&net3, &inputs, &targets).unwrap() - oracle).abs() < 1e-13);

    assert_eq!(
        sequence_nll(&net3, &inputs, &targets[..3]),
        Err(GruError::LengthMismatch {
            steps: 9,
            targets: 3
        })
    );
    assert_eq!(
        forward_sequence(&net3, &[]).unwrap_err(),
        GruError::EmptySequence
    );
}

#[test]
fn non_finite_inputs_are_rejected() {
    let mut net = random_net(NetworkDims::uniform(2, 3, 3), 2, 0.5);
    let bad = vec![vec![0.0, 1.0], vec![f64::NAN, 0.0]];
    assert_eq!(
        forward_sequence(&net, &bad).unwrap_err(),
        GruError::NonFinite {
            step: Some(1),
            what: "input"
        }
    );
    net.output.b_o[0] = f64::INFINITY;
    assert!(matches!(
        forward_sequence(&net, &bad[..1]),
        Err(GruError::NonFinite { .. })
    ));
}

#[test]
fn gradient_vanishes_at_saturated_optimum() {
    let mut net = GruNetwork::<f64>::zeros(NetworkDims::uniform(2, 3, 4));
    net.output.b_o = vec![40.0, 0.0, 0.0, 0.0];
    let inputs = random_inputs(2, 6, 2);
    let (_, grad) = nll_and_gradient(&net, &inputs, &[0; 6]).unwrap();
    assert!(grad.output.b_o.iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn w_hh_gradient_at_one_step_matches_closed_form() {
    // Single hidden layer, one step: the only path to w_hh is through the candidate.
    let net = random_net(NetworkDims::new(3, vec![4], 5), 21, 0.9);
    let x = vec![0.3, -0.7, 1.0];
    let target = 2;
    let (_, tape) = forward_sequence(&net, &[x.clone()]).unwrap();
    let grad = backward_sequence(&net, &tape, &[target]).unwrap();

    let c = &tape.steps[0].layers[0];
    let l = &net.layers[0];
    let p = &tape.steps[0].probs;
    let h0 = &l.h0;
    let x_width = 3;
    for i in 0..4 {
        // dL/dh_i through the output layer
        let mut dh = 0.0;
        for j in 0..5 {
            let dl = p[j] - if j == target { 1.0 } else { 0.0 };
            dh += net.output.w_yo.get(j, x_width + i) * dl;
        }
        let da = dh * (1.0 - c.z[i]) * (1.0 - c.h_tilde[i].powi(2));
        for k in 0..4 {
            let expected = da * c.r[i] * h0[k];
            let got = grad.layers[0].w_hh.get(i, k);
            assert!(
                (expected - got).abs() < 1e-14,
                "({i},{k}) {expected} vs {got}"
            );
        }
    }
}

fn assert_check_passes(net: &GruNetwork<f64>, inputs: &[Vec<f64>], targets: &[usize]) {
    let opts = GradCheckOptions {
        num_coords: 200,
        epsilon: 1e-5,
        tolerance: 1e-6,
        seed: 7,
    };
    let report = gradient_check(net, inputs, targets, &opts).unwrap();
    for b in &report.blocks {
        assert!(b.checked >= 200.min(b.checked));
        assert!(
            b.max_rel_error < 1e-6,
            "{}: rel {} (analytic {}, numeric {})",
            b.name,
            b.max_rel_error,
            b.analytic,
            b.numeric
        );
    }
    assert!(report.passed);
}

#[test]
fn gradient_check_dense_inputs() {
    let net = random_net(NetworkDims::uniform(5, 8, 7), 31, 0.8);
    assert_check_passes(&net, &random_inputs(5, 12, 32), &random_targets(7, 12, 33));
}

#[test]
fn gradient_check_rhythm_and_melody_shapes() {
    let (d, p) = (3, 7);
    let rhythm = random_net(NetworkDims::uniform(d + p, 8, d), 41, 0.8);
    assert_check_passes(
        &rhythm,
        &one_hot_inputs(d, p, 12, 42),
        &random_targets(d, 12, 43),
    );
    let melody = random_net(NetworkDims::uniform(p + d, 8, p), 44, 0.8);
    assert_check_passes(
        &melody,
        &one_hot_inputs(p, d, 12, 45),
        &random_targets(p, 12, 46),
    );
}

#[test]
fn transposed_w_hz_gradient_fails_the_check() {
    let net = random_net(NetworkDims::uniform(5, 8, 7), 51, 0.8);
    let inputs = random_inputs(5, 12, 52);
    let targets = random_targets(7, 12, 53);
    let (_, mut grad) = nll_and_gradient(&net, &inputs, &targets).unwrap();
    grad.layers[1].w_hz = grad.layers[1].w_hz.transpose();
    let opts = GradCheckOptions::default();
    let report = check_gradient_against(&net, &inputs, &targets, &grad, &opts).unwrap();
    assert!(!report.passed);
    let worst = report
        .blocks
        .iter()
        .find(|b| b.name == "layer1.w_hz")
        .unwrap();
    assert!(worst.max_rel_error > 1e-3);

    let lenient = GradCheckOptions {
        tolerance: f64::INFINITY,
        ..opts
    };
    assert!(
        check_gradient_against(&net, &inputs, &targets, &grad, &lenient)
            .unwrap()
            .passed
    );
}

#[test]
fn checker_refuses_wide_networks() {
    let net = GruNetwork::<f64>::zeros(NetworkDims::uniform(2, 33, 2));
    let err =
        gradient_check(&net, &[vec![0.0, 1.0]], &[0], &GradCheckOptions::default()).unwrap_err();
    assert_eq!(err, GruError::TooLargeForCheck(33));
}

#[test]
fn single_precision_network_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = GruNetwork::<f32>::init(NetworkDims::uniform(4, 6, 5), &mut rng);
    let inputs: Vec<Vec<f32>> = (0..5)
        .map(|i| (0..4).map(|j| if i % 4 == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let (nll, grad) = nll_and_gradient(&net, &inputs, &[0, 1, 2, 3, 4]).unwrap();
    assert!(nll.is_finite() && grad.is_finite());
    let (probs, _) = forward_sequence(&net, &inputs).unwrap();
    assert!(probs
        .iter()
        .all(|p| (p.iter().sum::<f32>() - 1.0).abs() < 1e-5));
}

#[test]
fn forward_is_deterministic() {
    let net = random_net(NetworkDims::uniform(4, 6, 5), 61, 1.0);
    let inputs = random_inputs(4, 10, 62);
    let (a, _) = forward_sequence(&net, &inputs).unwrap();
    let (b, _) = forward_sequence(&net, &inputs).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_normalized_and_states_bounded(seed in 0u64..10_000, len in 1usize..15, scale in 0.1f64..4.0) {
        let net = random_net(NetworkDims::uniform(4, 6, 5), seed, scale);
        let inputs = random_inputs(4, len, seed + 1);
        let (probs, tape) = forward_sequence(&net, &inputs).unwrap();
        for p in &probs {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }
        for step in &tape.steps {
            for l in &step.layers {
                prop_assert!(l.h.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }
}
