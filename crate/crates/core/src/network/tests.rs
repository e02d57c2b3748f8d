use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::Graph;
use crate::error::Error;
use crate::gradcheck::{max_relative_error, numeric_gradient};
use crate::tensor::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn small() -> ModelConfig {
    ModelConfig::reduced(3, vec![4, 6, 8])
}

#[test]
fn full_config_shape_contract() {
    let net = UNet::new(ModelConfig::default(), &mut rng(0)).unwrap();
    let mut g = Graph::new();
    let p = net.params().bind_frozen(&mut g);
    let x = g.constant(random(&[2, 1, 64, 64], 1));
    let out = net.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(out.probabilities).shape(), &[2, 1, 64, 64]);
    let scales: Vec<f64> = out.features.levels.iter().map(|l| l.scale()).collect();
    assert_eq!(scales, vec![1.0, 0.5, 0.25, 0.125]);
    let chans: Vec<usize> = out.features.levels.iter().map(|l| l.channels).collect();
    assert_eq!(chans, vec![64, 96, 128, 256]);
    for l in &out.features.levels {
        let (_, c, h, w) = g.value(l.activation).dims4();
        assert_eq!((c, h, w), (l.channels, 64 / l.stride, 64 / l.stride));
    }
    let pooled = pool_features(&mut g, &out.features).unwrap();
    assert_eq!(g.value(pooled).shape(), &[2, 544, 16, 16]);
}

/// Independent layer arithmetic: every conv carries k²·cin·cout weights plus cout biases.
fn expected_param_count(cfg: &ModelConfig) -> usize {
    let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
    let c = &cfg.encoder_channels;
    let mut total = 0;
    for i in 0..cfg.levels {
        let (cin, k) = if i == 0 {
            (cfg.in_channels, cfg.first_kernel)
        } else {
            (c[i - 1], cfg.other_kernel)
        };
        total += conv(k, cin, c[i]) + conv(cfg.other_kernel, c[i], c[i]);
    }
    for i in 0..cfg.levels - 1 {
        total += conv(cfg.other_kernel, c[i + 1] + c[i], c[i]) + conv(cfg.other_kernel, c[i], c[i]);
    }
    total + conv(1, c[0], cfg.out_channels)
}

#[test]
fn parameter_count_matches_layer_arithmetic() {
    for cfg in [
        ModelConfig::default(),
        small(),
        ModelConfig::reduced(4, vec![8, 8, 16, 32]),
    ] {
        let net = UNet::new(cfg.clone(), &mut rng(2)).unwrap();
        assert_eq!(net.params().count(), expected_param_count(&cfg));
    }
    // hand-evaluated for the default five-level network
    assert_eq!(expected_param_count(&ModelConfig::default()), 8_216_321);
}

#[test]
fn rejects_non_divisible_input() {
    let net = UNet::new(ModelConfig::default(), &mut rng(0)).unwrap();
    let err = net.predict(&Tensor::zeros(&[1, 1, 40, 64])).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
    let err = net.predict(&Tensor::zeros(&[1, 2, 64, 64])).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn identical_rows_give_identical_outputs_and_batch_permutes() {
    let net = UNet::new(small(), &mut rng(3)).unwrap();
    let a = random(&[1, 1, 16, 16], 4);
    let b = random(&[1, 1, 16, 16], 5);
    let out = net.predict(&Tensor::cat_batch(&[&a, &a, &b])).unwrap();
    assert_eq!(out.narrow_batch(0, 1), out.narrow_batch(1, 1));
    let swapped = net.predict(&Tensor::cat_batch(&[&b, &a, &a])).unwrap();
    assert_eq!(swapped.narrow_batch(0, 1), out.narrow_batch(2, 1));
    assert_eq!(swapped.narrow_batch(1, 1), out.narrow_batch(0, 1));
    assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn unet_input_gradient_matches_finite_differences() {
    let net = UNet::new(small(), &mut rng(6)).unwrap();
    let x0 = random(&[1, 1, 16, 16], 7);
    let proj = random(&[1, 1, 16, 16], 8);
    let loss = |x: &Tensor| {
        let p = net.predict(x).unwrap();
        p.zip_map(&proj, |a, b| a * b).sum()
    };
    let mut g = Graph::new();
    let p = net.params().bind_frozen(&mut g);
    let x = g.leaf(x0.clone());
    let out = net.forward(&mut g, &p, x).unwrap();
    let s = g.mul_const(out.probabilities, proj.clone());
    let s = g.sum(s);
    g.backward(s);
    let analytic = g.grad(x).unwrap().clone();
    let numeric = numeric_gradient(loss, &x0, 1e-6);
    let err = max_relative_error(&analytic, &numeric, 1e-6);
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn pool_features_contract() {
    let mut g = Graph::new();
    let levels: Vec<PyramidLevel> = [(1, 3), (2, 5), (4, 7), (8, 9)]
        .iter()
        .map(|&(stride, c)| PyramidLevel {
            stride,
            channels: c,
            activation: g.constant(Tensor::full(&[2, c, 32 / stride, 32 / stride], 1.5)),
        })
        .collect();
    let pooled = pool_features(&mut g, &FeaturePyramid { levels }).unwrap();
    let t = g.value(pooled);
    assert_eq!(t.shape(), &[2, 24, 8, 8]);
    assert!(t.data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
    assert!(matches!(
        pool_features(&mut g, &FeaturePyramid { levels: vec![] }),
        Err(Error::Contract(_))
    ));
}

#[test]
fn grad_reverse_identity_forward_negated_backward() {
    for lambda in [0.0, 0.3, 1.0, 2.5] {
        let x0 = random(&[3, 4], 9);
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = grad_reverse(&mut g, x, lambda);
        assert_eq!(g.value(y), &x0);
        let s = g.sum(y);
        g.backward(s);
        assert!(g.grad(x).unwrap().data().iter().all(|&d| d == -lambda));
    }
}

#[test]
fn discriminator_flatten_dim_and_logits() {
    let cfg = DiscriminatorConfig::default();
    assert_eq!(cfg.conv_output(), (1, 1));
    assert_eq!(cfg.flatten_dim(), 512);
    let mut d = Discriminator::new(cfg, &mut rng(10)).unwrap();
    let pooled = random(&[2, 544, 16, 16], 11);
    let a = d.logits(&pooled).unwrap();
    let b = d.logits(&pooled).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
}

#[test]
fn discriminator_dropout_is_stochastic_in_training() {
    let cfg = DiscriminatorConfig {
        input_channels: 6,
        conv_channels: vec![4, 4, 4, 4],
        ..DiscriminatorConfig::default()
    };
    let mut d = Discriminator::new(cfg, &mut rng(12)).unwrap();
    let pooled = random(&[4, 6, 16, 16], 13);
    let mut r = rng(14);
    let mut run = |d: &mut Discriminator| {
        let mut g = Graph::new();
        let p = d.params().bind_frozen(&mut g);
        let x = g.constant(pooled.clone());
        let y = d.forward(&mut g, &p, x, Mode::Train(&mut r)).unwrap();
        g.value(y).clone()
    };
    let first = run(&mut d);
    let second = run(&mut d);
    assert_ne!(first, second);
}

#[test]
fn discriminator_rejects_tiny_input_at_construction() {
    let cfg = DiscriminatorConfig {
        input_size: (8, 8),
        ..DiscriminatorConfig::default()
    };
    assert!(matches!(
        Discriminator::new(cfg, &mut rng(0)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn discriminator_config_follows_model() {
    let cfg = discriminator_for(&ModelConfig::default(), (64, 64));
    assert_eq!(cfg.input_channels, 544);
    assert_eq!(cfg.input_size, (16, 16));
    let cfg = discriminator_for(&small(), (32, 32));
    assert_eq!(cfg.input_channels, 10);
    assert_eq!(cfg.input_size, (32, 32));
    assert_eq!(cfg.flatten_dim(), 512 * 2 * 2);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = UNet::new(small(), &mut rng(15)).unwrap();
    let disc = Discriminator::new(discriminator_for(&small(), (16, 16)), &mut rng(16)).unwrap();
    let ckpt = Checkpoint::from_model(&net, 42, None).with_discriminator(&disc, None);
    let path = dir.path().join("model.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(
        back.unet().unwrap().params().checksum(),
        net.params().checksum()
    );
    let lean = back.inference_only();
    assert!(lean.discriminator.is_none());
    let x = random(&[1, 1, 16, 16], 17);
    assert_eq!(
        lean.unet().unwrap().predict(&x).unwrap(),
        net.predict(&x).unwrap()
    );
}
