mod common;

use common::{grad_check, grad_draw};
use delayfb_core::logsim::stream_rng;
use delayfb_core::nnet::{adam_step, grad, Gradients, LossKind, ModelParams, ModelShape, OptimizerState};
use delayfb_core::{FeatureSchema, DAY};

const KINDS: [LossKind; 4] = [LossKind::Oracle, LossKind::Vanilla, LossKind::Lc, LossKind::Bce];

#[test]
fn analytic_gradients_match_finite_differences() {
    for kind in KINDS {
        for draw in 0..20 {
            let d = grad_draw(kind, 1000 + draw);
            let err = grad_check(&d, kind);
            assert!(err < 1e-4, "{kind:?} draw {draw}: relative error {err}");
        }
    }
}

#[test]
fn duplicated_batch_gives_same_gradient() {
    let d = grad_draw(LossKind::Lc, 5);
    let batch = d.batch();
    let doubled: Vec<_> = batch.iter().chain(batch.iter()).copied().collect();
    let a = grad(&d.params, &batch, LossKind::Lc).unwrap();
    let b = grad(&d.params, &doubled, LossKind::Lc).unwrap();
    for (x, y) in a.tensors.iter().flatten().zip(b.tensors.iter().flatten()) {
        assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
    }
}

#[test]
fn single_weight_gradient_matches_hand_derivation() {
    // One field of one category, d = 1, no hidden layer: f = sigmoid(u * a + b).
    let schema = FeatureSchema::new(vec![1]).unwrap();
    let shape = ModelShape {
        embedding_dim: 1,
        hidden: vec![],
        elapsed_window: None,
    };
    let mut p = ModelParams::zeros(&schema, &shape).unwrap();
    p.embedding.data[0] = 0.7;
    p.layers[0].weight.data[0] = -1.3;
    p.layers[0].bias[0] = 0.2;
    let f = 1.0 / (1.0 + (-(0.7f64 * -1.3 + 0.2)).exp());
    let batch = [delayfb_core::nnet::Example {
        features: &[0],
        elapsed: None,
        target: delayfb_core::nnet::Target { v: 0.0, c: 1.0, w: 0.0 },
    }];
    let g = grad(&p, &batch, LossKind::Oracle).unwrap();
    // dL/dz = f - c; dz/da = u; dz/du = a; dz/db = 1.
    assert!((g.tensors[0][0] - (f - 1.0) * -1.3).abs() < 1e-14);
    assert!((g.tensors[1][0] - (f - 1.0) * 0.7).abs() < 1e-14);
    assert!((g.tensors[2][0] - (f - 1.0)).abs() < 1e-14);
}

#[test]
fn adam_first_step_moves_each_parameter_by_lr() {
    let schema = FeatureSchema::new(vec![3, 2]).unwrap();
    let shape = ModelShape {
        embedding_dim: 2,
        hidden: vec![4],
        elapsed_window: Some(30 * DAY),
    };
    let mut p = ModelParams::init(&schema, &shape, &mut stream_rng(1, 1)).unwrap();
    let before = p.clone();
    let mut g = Gradients::zeros_like(&p);
    for (i, x) in g.tensors.iter_mut().flatten().enumerate() {
        *x = if i % 3 == 0 { 0.0 } else { (i as f64 * 0.37).sin() };
    }
    let mut state = OptimizerState::new(&p);
    adam_step(&mut p, &g, &mut state, 1e-3, 0.0).unwrap();
    for ((a, b), gi) in p
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .zip(before.tensors().iter().flat_map(|t| t.iter()))
        .zip(g.tensors.iter().flatten())
    {
        let step = b - a;
        if *gi == 0.0 {
            assert_eq!(step, 0.0);
        } else {
            // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
            let expected = 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((step - expected).abs() < 1e-15, "{step} vs {expected}");
        }
    }
    assert_eq!(state.step, 1);
}

#[test]
fn non_finite_gradient_is_a_numeric_error() {
    let d = grad_draw(LossKind::Oracle, 3);
    let mut p = d.params.clone();
    let mut g = Gradients::zeros_like(&p);
    g.tensors[0][0] = f64::NAN;
    let mut state = OptimizerState::new(&p);
    let err = adam_step(&mut p, &g, &mut state, 1e-3, 0.0).unwrap_err();
    assert!(matches!(err, delayfb_core::Error::Numeric(_)));
    assert_eq!(p, d.params);
}
