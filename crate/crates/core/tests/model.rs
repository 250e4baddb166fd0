mod common;

use proptest::prelude::*;

use common::*;
use radtrain::autodiff::{Graph, Mode};
use radtrain::labels::NUM_CLASSES;
use radtrain::model::{Model, ModelConfig};
use radtrain::tensor::Tensor;
use radtrain::Error;

/// Default architecture counted by hand: stem 80, stage widths 8/16/32 with
/// 2400, 8384 and 33152 parameters, head batch norm 64, classifier 495.
const DEFAULT_PARAMETERS: usize = 44_575;

fn default_model() -> Model<f64> {
    Model::new(ModelConfig::default()).unwrap()
}

#[test]
fn same_seed_same_parameters() {
    assert_eq!(default_model(), default_model());
    let other = Model::<f64>::new(ModelConfig {
        seed: 1,
        ..ModelConfig::default()
    })
    .unwrap();
    assert_ne!(default_model().params(), other.params());
}

#[test]
fn parameter_count_matches_hand_count() {
    let m = default_model();
    let counted: usize = m.params().iter().map(|p| p.value.numel()).sum();
    assert_eq!(counted, DEFAULT_PARAMETERS);
    assert_eq!(m.parameter_count(), DEFAULT_PARAMETERS);
    assert_eq!(ModelConfig::default().parameter_count(), DEFAULT_PARAMETERS);
}

#[test]
fn fifteen_classes_required() {
    let cfg = ModelConfig {
        num_classes: 14,
        ..ModelConfig::default()
    };
    assert!(matches!(Model::<f64>::new(cfg), Err(Error::Config(_))));
}

#[test]
fn small_inputs_rejected() {
    let m = default_model();
    let err = m.logits(&Tensor::zeros(&[1, 1, 15, 40]), Mode::Eval).unwrap_err();
    assert!(matches!(err, Error::InputTooSmall { height: 15, width: 40, min: 16 }));
}

#[test]
fn same_weights_accept_64_and_340() {
    let m = default_model();
    let mut r = rng(1);
    for side in [64, 340] {
        let x = uniform(&mut r, &[2, 1, side, side], -1.0, 1.0);
        assert_eq!(m.logits(&x, Mode::Eval).unwrap().shape(), &[2, NUM_CLASSES]);
    }
}

#[test]
fn zero_classifier_gives_half() {
    let mut m = default_model();
    for name in ["fc.weight", "fc.bias"] {
        m.param_mut(name).unwrap().value.fill(0.0);
    }
    let mut r = rng(2);
    let x = uniform(&mut r, &[3, 1, 20, 20], -1.0, 1.0);
    assert!(m.logits(&x, Mode::Eval).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(m.predict_probs(&x).unwrap().data().iter().all(|&v| v == 0.5));
}

/// Zeroes the residual branch of stage 0 block 0 (in the
/// default config: stride 1, no projection).
fn zero_branch(m: &mut Model<f64>) {
    for suffix in ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "bn1.gamma", "bn2.gamma"] {
        m.param_mut(&format!("stage0.block0.{suffix}")).unwrap().value.fill(0.0);
    }
}

#[test]
fn zeroed_branch_is_identity_with_gradient_passthrough() {
    let mut m = default_model();
    zero_branch(&mut m);
    let mut r = rng(3);
    let xt = uniform(&mut r, &[2, 8, 9, 11], -2.0, 2.0);
    for mode in [Mode::Train, Mode::Eval] {
        let mut g = Graph::new();
        let x = g.leaf(xt.clone(), true);
        let (y, _) = m.block_forward(&mut g, 0, x, mode).unwrap();
        assert_eq!(g.value(y), &xt);
        let loss = project(&mut g, y, 17);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), grads.get(y).unwrap());
    }
}

#[test]
fn probabilities_in_unit_interval_and_deterministic() {
    let m = default_model();
    let mut r = rng(4);
    let x = uniform(&mut r, &[4, 1, 24, 24], -3.0, 3.0);
    let p = m.predict_probs(&x).unwrap();
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(p, m.predict_probs(&x).unwrap());
    let logits = m.logits(&x, Mode::Eval).unwrap();
    for (i, a) in logits.data().iter().enumerate() {
        for (j, b) in logits.data().iter().enumerate() {
            if a < b {
                assert!(p.data()[i] <= p.data()[j]);
            }
        }
    }
}

#[test]
fn tiny_net_every_parameter_gradient() {
    let cfg = ModelConfig {
        stem_channels: 2,
        stage_widths: vec![2, 3],
        blocks_per_stage: 1,
        ..ModelConfig::default()
    };
    let m = Model::new(cfg).unwrap();
    let mut r = rng(5);
    let x = uniform(&mut r, &[3, 1, 16, 16], -1.0, 1.0);
    let y = random_targets(&mut r, 3);
    let (err, probed) = check_model_gradients(&m, &x, &y, None, 0);
    assert_eq!(probed, m.parameter_count());
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn default_net_gradients_on_every_tensor() {
    let m = default_model();
    let mut r = rng(6);
    let x = uniform(&mut r, &[2, 1, 16, 16], -1.0, 1.0);
    let y = random_targets(&mut r, 2);
    let (err, probed) = check_model_gradients(&m, &x, &y, Some(16), 6);
    assert!(probed >= m.params().len());
    assert!(err <= 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_shape_is_size_agnostic(h in 16usize..=340, w in 16usize..=340, b in 1usize..3) {
        let m = default_model();
        let x = Tensor::from_fn(&[b, 1, h, w], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
        for mode in [Mode::Eval, Mode::Train] {
            let shape = m.logits(&x, mode).unwrap().shape().to_vec();
            prop_assert_eq!(shape, vec![b, NUM_CLASSES]);
        }
    }
}
