use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{adaptation_graph, AdaptBatch};
use super::*;
use crate::augmentation::{augment_batch, sample_spec, AugmentationSpec};
use crate::autograd::Graph;
use crate::data::{
    build_split, make_synthetic_domains, Domain, LabelMap, Protocol, SyntheticShiftParams, Volume,
};
use crate::error::Error;
use crate::network::{Discriminator, ModelConfig, UNet};
use crate::tensor::Tensor;

fn tiny() -> ProtocolConfig {
    ProtocolConfig {
        model: ModelConfig::reduced(3, vec![4, 6, 8]),
        discriminator: crate::network::DiscriminatorConfig {
            conv_channels: vec![4, 4, 8, 8],
            fc_hidden: vec![8, 8],
            ..Default::default()
        },
        optim: OptimConfig {
            iterations: 6,
            batch_size: 4,
            validation_interval: 2,
            ..OptimConfig::default()
        },
        ..ProtocolConfig::default()
    }
}

fn corpus() -> (crate::data::Dataset, crate::data::Dataset) {
    let shift = SyntheticShiftParams {
        gamma: 1.8,
        bias_coeffs: vec![0.2, -0.1, 0.15],
        noise_sigma: 0.05,
        seed: 2,
    };
    make_synthetic_domains(2, 5, &shift, 32, 3).unwrap()
}

#[test]
fn paper_defaults() {
    let o = OptimConfig::default();
    assert_eq!((o.iterations, o.batch_size), (15_000, 20));
    assert_eq!((o.main_lr, o.disc_lr, o.alpha_pc), (1e-3, 1e-4, 1.0));
    assert!(o.validate().is_ok());
    let odd = OptimConfig {
        batch_size: 5,
        ..o.clone()
    };
    assert!(matches!(odd.validate(), Err(Error::Config(_))));
    assert!(matches!(
        OptimConfig { iterations: 0, ..o }.validate(),
        Err(Error::Config(_))
    ));
}

#[test]
fn grl_schedule_shape() {
    let t = 1000;
    assert_eq!(grl_lambda(0, t, 0.25), 0.0);
    let mut prev = 0.0;
    for it in 0..t {
        let l = grl_lambda(it, t, 0.25);
        assert!(l >= prev, "nondecreasing at {it}");
        assert!((0.0..=1.0).contains(&l));
        prev = l;
    }
    for it in 250..t {
        assert_eq!(grl_lambda(it, t, 0.25), 1.0);
    }
    // Midway through the ramp: 2 / (1 + e^-5) - 1.
    let expected = 2.0 / (1.0 + (-5.0f64).exp()) - 1.0;
    assert!((grl_lambda(125, t, 0.25) - expected).abs() < 1e-15);
    // Just before the horizon the sigmoid has all but saturated.
    assert!(1.0 - grl_lambda(249, t, 0.25) < 1e-4);
}

#[test]
fn padding_round_trips() {
    let plane: Vec<f64> = (0..15).map(f64::from).collect();
    assert_eq!(padded_extent(5, 4), 8);
    assert_eq!(padded_extent(8, 4), 8);
    let padded = pad_plane(&plane, 3, 5, 4, 8);
    assert_eq!(padded.len(), 32);
    assert_eq!(padded.iter().sum::<f64>(), plane.iter().sum::<f64>());
    assert_eq!(crop_plane(&padded, 8, 3, 5), plane);
}

#[test]
fn source_training_reduces_loss_and_is_deterministic() {
    let (source, _) = corpus();
    let cfg = tiny();
    let optim = OptimConfig {
        iterations: 30,
        ..cfg.optim.clone()
    };
    let a = train_source(&source, &cfg.model, &optim, cfg.axis, 1).unwrap();
    let b = train_source(&source, &cfg.model, &optim, cfg.axis, 1).unwrap();
    assert_eq!(a.history.len(), 30);
    assert_eq!(a.history, b.history);
    assert_eq!(a.checkpoint, b.checkpoint);
    let first: f64 = a.history[..5].iter().map(|l| l.losses.l_sup).sum();
    let last: f64 = a.history[25..].iter().map(|l| l.losses.l_sup).sum();
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn oversized_batches_sample_with_replacement() {
    let (source, _) = corpus();
    let cfg = tiny();
    // 2 subjects × 3 slices = 6 slices < 64.
    let optim = OptimConfig {
        iterations: 1,
        batch_size: 64,
        ..cfg.optim.clone()
    };
    assert_eq!(
        train_source(&source, &cfg.model, &optim, cfg.axis, 0)
            .unwrap()
            .history
            .len(),
        1
    );
}

#[test]
fn unlabeled_source_is_a_contract_error() {
    let (source, _) = corpus();
    let mut items = source.items().to_vec();
    items[1].label = None;
    let source = crate::data::Dataset::new(Domain::Source, items).unwrap();
    let cfg = tiny();
    assert!(matches!(
        train_source(&source, &cfg.model, &cfg.optim, cfg.axis, 0),
        Err(Error::Contract(_))
    ));
}

fn adapt_fixture(
    lambda: f64,
) -> (
    Graph,
    UNet,
    Discriminator,
    crate::network::Bound,
    crate::network::Bound,
    super::train::AdaptVars,
) {
    let cfg = tiny();
    let net = UNet::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut disc = Discriminator::new(
        cfg.discriminator_for((16, 16)),
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let rand_t = |r: &mut ChaCha8Rng| {
        use rand::Rng;
        Tensor::from_fn(&[2, 1, 16, 16], |_| r.random_range(0.0..1.0))
    };
    let source_x = rand_t(&mut r);
    let source_y = rand_t(&mut r).map(|v| if v > 0.7 { 1.0 } else { 0.0 });
    let target_x = rand_t(&mut r);
    let specs: Vec<AugmentationSpec> = (0..2)
        .map(|k| sample_spec(k, &cfg.augmentation, 16))
        .collect();
    let batch = AdaptBatch {
        source_x,
        source_y,
        target_aug: augment_batch(&specs, &target_x),
        target_x,
        specs,
    };
    let mut g = Graph::new();
    let pu = net.params().bind(&mut g);
    let pd = disc.params().bind(&mut g);
    let vars = adaptation_graph(
        &mut g, &net, &pu, &mut disc, &pd, &batch, lambda, 1.0, &mut r,
    )
    .unwrap();
    (g, net, disc, pu, pd, vars)
}

#[test]
fn zero_lambda_blocks_adversarial_gradient_into_unet() {
    let (mut g, net, disc, pu, pd, vars) = adapt_fixture(0.0);
    g.backward(vars.l_adv);
    let gu = pu.grads(&mut g, net.params());
    assert!(gu.iter().all(|t| t.max_abs() == 0.0));
    let gd = pd.grads(&mut g, disc.params());
    assert!(
        gd.iter().any(|t| t.max_abs() > 0.0),
        "the discriminator still learns"
    );
}

#[test]
fn adversarial_gradient_reaches_unet_reversed() {
    // With λ = 1 the U-Net receives the negated discriminator gradient:
    // compare against λ = 1 with the sign flipped by scaling the loss.
    let (mut g1, net, _, pu1, _, v1) = adapt_fixture(1.0);
    g1.backward(v1.l_adv);
    let rev = pu1.grads(&mut g1, net.params());
    let (mut g2, net2, _, pu2, _, v2) = adapt_fixture(0.5);
    g2.backward(v2.l_adv);
    let half = pu2.grads(&mut g2, net2.params());
    assert!(rev.iter().any(|t| t.max_abs() > 0.0));
    for (a, b) in rev.iter().zip(&half) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(
                (x - 2.0 * y).abs() <= 1e-9 * x.abs().max(1e-12),
                "{x} vs 2×{y}"
            );
        }
    }
}

#[test]
fn optimizers_touch_only_their_own_network() {
    let (mut g, mut net, mut disc, pu, pd, vars) = adapt_fixture(1.0);
    g.backward(vars.total);
    let gu = pu.grads(&mut g, net.params());
    let gd = pd.grads(&mut g, disc.params());
    let mut main = optim::Adam::new(net.params(), 1e-3);
    let mut dopt = optim::Adam::new(disc.params(), 1e-4);
    let (u0, d0) = (net.params().checksum(), disc.params().checksum());
    dopt.step(disc.params_mut(), &gd);
    assert_eq!(net.params().checksum(), u0);
    assert_ne!(disc.params().checksum(), d0);
    let d1 = disc.params().checksum();
    main.step(net.params_mut(), &gu);
    assert_eq!(disc.params().checksum(), d1);
    assert_ne!(net.params().checksum(), u0);
}

#[test]
fn one_shot_batches_only_see_the_test_subject() {
    let (source, target) = corpus();
    let cfg = tiny();
    let base = train_source(&source, &cfg.model, &cfg.optim, cfg.axis, 0).unwrap();
    let split = build_split(&target, Protocol::OneShotUda, "S3", 0).unwrap();
    let run = adapt(&base.checkpoint, &source, &target, &split, &cfg, 0).unwrap();
    assert_eq!(run.history.len(), 6);
    assert!(run
        .history
        .iter()
        .all(|l| l.target_subjects == vec!["S3".to_string()]));
    assert_eq!(run.history[0].lambda, 0.0);
    assert!(run.checkpoint.discriminator.is_some());
    for s in target.items() {
        assert_eq!(s.label.as_ref().unwrap().read_count(), 0);
    }
}

#[test]
fn adapt_rejects_non_uda_splits() {
    let (source, target) = corpus();
    let cfg = tiny();
    let base = train_source(
        &source,
        &cfg.model,
        &OptimConfig {
            iterations: 1,
            ..cfg.optim.clone()
        },
        cfg.axis,
        0,
    )
    .unwrap();
    let split = build_split(&target, Protocol::NoAdaptation, "S1", 0).unwrap();
    assert!(matches!(
        adapt(&base.checkpoint, &source, &target, &split, &cfg, 0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn supervised_selects_argmin_validation_checkpoint() {
    let (source, target) = corpus();
    let cfg = tiny();
    let base = train_source(&source, &cfg.model, &cfg.optim, cfg.axis, 0).unwrap();
    let split = build_split(&target, Protocol::Supervised, "S2", 0).unwrap();
    let run = train_supervised_target(&base.checkpoint, &target, &split, &cfg, 0).unwrap();
    assert_eq!(
        run.validation.len() as u64,
        cfg.optim.iterations / cfg.optim.validation_interval
    );
    let best = run
        .validation
        .iter()
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .unwrap();
    assert_eq!(run.selected_iteration, best.iteration);
    // The kept weights reproduce the recorded validation loss.
    let val = split.validation_subject.clone().unwrap();
    let net = run.checkpoint.unet().unwrap();
    let subject = target.get(&val).unwrap();
    let probs = predict_probabilities(&net, &subject.volume, cfg.axis).unwrap();
    let mask = subject.label.as_ref().unwrap().read();
    let overlap: f64 = probs.iter().zip(mask).map(|(p, &m)| p * f64::from(m)).sum();
    let sums: f64 = probs.iter().sum::<f64>() + mask.iter().map(|&m| f64::from(m)).sum::<f64>();
    let loss = 1.0 - (2.0 * overlap + 1e-5) / (sums + 1e-5);
    assert!((loss - best.loss).abs() < 1e-9, "{loss} vs {}", best.loss);
    assert_eq!(
        target
            .get("S2")
            .unwrap()
            .label
            .as_ref()
            .unwrap()
            .read_count(),
        0
    );
}

#[test]
fn predict_volume_shapes_and_thresholds() {
    let cfg = tiny();
    let net = UNet::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let dims = [7, 30, 21];
    let v = Volume::new(
        (0..7 * 30 * 21).map(|i| (i as f64 * 0.37).sin()).collect(),
        dims,
        [1.0; 3],
        "odd",
        Domain::Target,
    )
    .unwrap();
    let mask = predict_volume(&net, &v, 0.5, cfg.axis).unwrap();
    assert_eq!(mask.dims(), dims);
    assert!(predict_volume(&net, &v, 0.0, cfg.axis)
        .unwrap()
        .read()
        .iter()
        .all(|&m| m == 1));
    assert!(predict_volume(&net, &v, 1.0, cfg.axis)
        .unwrap()
        .read()
        .iter()
        .all(|&m| m == 0));
}

#[test]
fn predict_volume_rejects_channel_mismatch() {
    let cfg = tiny();
    let model = ModelConfig {
        in_channels: 2,
        ..cfg.model.clone()
    };
    let net = UNet::new(model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let v = Volume::new(
        vec![0.0; 2 * 16 * 16],
        [2, 16, 16],
        [1.0; 3],
        "v",
        Domain::Target,
    )
    .unwrap();
    assert!(matches!(
        predict_volume(&net, &v, 0.5, cfg.axis),
        Err(Error::Contract(_))
    ));
}

#[test]
fn run_protocol_records_provenance() {
    let (source, target) = corpus();
    let cfg = tiny();
    let base = train_source(&source, &cfg.model, &cfg.optim, cfg.axis, 4).unwrap();
    let (pred, rec, _) = run_protocol_with_base(
        Protocol::TestTimeUda,
        &base,
        &source,
        &target,
        "S4",
        &cfg,
        4,
    )
    .unwrap();
    assert_eq!(rec.split.unlabeled_pool.len(), 3);
    assert!(rec.split.unlabeled_pool.contains("S4"));
    assert_eq!(rec.history.len() as u64, cfg.optim.iterations);
    assert_eq!(rec.prediction_checksum, mask_checksum(&pred));

    let (_, classic, _) =
        run_protocol_with_base(Protocol::ClassicUda, &base, &source, &target, "S4", &cfg, 4)
            .unwrap();
    assert!(classic
        .history
        .iter()
        .all(|l| !l.target_subjects.contains(&"S4".to_string())));

    let (_, none, _) = run_protocol_with_base(
        Protocol::NoAdaptation,
        &base,
        &source,
        &target,
        "S4",
        &cfg,
        4,
    )
    .unwrap();
    assert!(none.history.iter().all(|l| l.target_subjects.is_empty()));
    assert_eq!(
        target
            .get("S4")
            .unwrap()
            .label
            .as_ref()
            .unwrap()
            .read_count(),
        0
    );

    let (pred2, rec2, _) = run_protocol_with_base(
        Protocol::TestTimeUda,
        &base,
        &source,
        &target,
        "S4",
        &cfg,
        4,
    )
    .unwrap();
    assert_eq!(rec2.without_timing(), rec.without_timing());
    assert_eq!(pred2, pred);
    let json = serde_json::to_string(&rec).unwrap();
    assert_eq!(serde_json::from_str::<RunRecord>(&json).unwrap(), rec);
}

#[test]
fn checksum_depends_on_content() {
    let a = LabelMap::new(vec![0, 1, 0, 0], [1, 2, 2], "a").unwrap();
    let b = LabelMap::new(vec![0, 0, 1, 0], [1, 2, 2], "a").unwrap();
    assert_ne!(mask_checksum(&a), mask_checksum(&b));
    assert_eq!(mask_checksum(&a), mask_checksum(&a.detached()));
}
