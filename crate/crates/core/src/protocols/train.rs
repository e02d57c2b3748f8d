use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::pool::{crop_plane, pad_plane, padded_extent, plane_shape, SlicePool};
use super::{grl_lambda, OptimConfig, ProtocolConfig};
use crate::augmentation::{augment_batch, sample_spec, warp_predictions, AugmentationSpec};
use crate::autograd::Graph;
use crate::data::{
    derive_seed, slice_buffer, stack_buffer, Axis, Dataset, LabelMap, Protocol, ProtocolSplit,
    Volume,
};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_op, combine, paired_consistency_op, soft_dice_op, LossBundle, DICE_EPSILON,
};
use crate::network::{pool_features, Bound, Checkpoint, Discriminator, Mode, ModelConfig, UNet};
use crate::tensor::Tensor;

// Random streams, kept apart so that e.g. changing the augmentation
// configuration does not change which slices are drawn.
const STREAM_INIT: u64 = 0x10;
const STREAM_BATCH: u64 = 0x11;
const STREAM_AUG: u64 = 0x12;
const STREAM_DROPOUT: u64 = 0x13;

fn stream(seed: u64, phase: Protocol, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, phase as u64))
}

/// One training step's losses and which target subjects fed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    #[serde(flatten)]
    pub losses: LossBundle,
    pub lambda: f64,
    pub target_subjects: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub iteration: u64,
    pub loss: f64,
}

/// Result of a training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub history: Vec<IterationLog>,
    pub validation: Vec<ValidationPoint>,
    /// Iteration whose weights were kept (the last one unless selection ran).
    pub selected_iteration: u64,
}

fn supervised_step(
    net: &mut UNet,
    adam: &mut Adam,
    pool: &SlicePool,
    rng: &mut ChaCha8Rng,
    batch: usize,
    iteration: u64,
    target_subjects: bool,
) -> Result<IterationLog> {
    let idx = pool.sample(rng, batch);
    let x = pool.images(&idx);
    let y = pool.labels(&idx);
    let mut g = Graph::new();
    let p = net.params().bind(&mut g);
    let xv = g.constant(x);
    let out = net.forward(&mut g, &p, xv)?;
    let loss = soft_dice_op(&mut g, out.probabilities, &y, DICE_EPSILON)?;
    let l_sup = g.value(loss).data()[0];
    g.backward(loss);
    let grads = p.grads(&mut g, net.params());
    adam.step(net.params_mut(), &grads);
    Ok(IterationLog {
        iteration,
        losses: combine(l_sup, 0.0, 0.0, 0.0),
        lambda: 0.0,
        target_subjects: if target_subjects {
            pool.subjects(&idx)
        } else {
            Vec::new()
        },
    })
}

/// Train a fresh U-Net on labelled source slices with the dice loss only.
pub fn train_source(
    source: &Dataset,
    model: &ModelConfig,
    optim: &OptimConfig,
    axis: Axis,
    seed: u64,
) -> Result<Trained> {
    model.validate()?;
    optim.validate()?;
    let pool = SlicePool::labelled_source(source, axis, model.size_divisor())?;
    if pool.len() == 0 {
        return Err(Error::InsufficientData(
            "source dataset has no slices".into(),
        ));
    }
    let mut net = UNet::new(
        model.clone(),
        &mut stream(seed, Protocol::NoAdaptation, STREAM_INIT),
    )?;
    let mut adam = Adam::new(net.params(), optim.main_lr);
    let mut rng = stream(seed, Protocol::NoAdaptation, STREAM_BATCH);
    let history = (0..optim.iterations)
        .map(|it| {
            supervised_step(
                &mut net,
                &mut adam,
                &pool,
                &mut rng,
                optim.batch_size,
                it,
                false,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trained {
        checkpoint: Checkpoint::from_model(&net, optim.iterations, Some(&adam)),
        history,
        validation: Vec::new(),
        selected_iteration: optim.iterations,
    })
}

/// One adversarial + paired-consistency batch.
pub(crate) struct AdaptBatch {
    pub source_x: Tensor,
    pub source_y: Tensor,
    pub target_x: Tensor,
    pub target_aug: Tensor,
    pub specs: Vec<AugmentationSpec>,
}

/// Scalar loss nodes of one adaptation step.
pub(crate) struct AdaptVars {
    pub l_sup: crate::autograd::Var,
    pub l_pc: crate::autograd::Var,
    pub l_adv: crate::autograd::Var,
    pub total: crate::autograd::Var,
}

/// Forward pass of one adaptation step.
///
/// Source, target and augmented-target slices share a single U-Net pass.
/// The supervised loss sees the source part, the consistency loss compares
/// the spatially warped target prediction with the prediction on the
/// augmented image, and the discriminator sees the pooled features of all
/// three groups through the gradient reversal layer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adaptation_graph(
    g: &mut Graph,
    net: &UNet,
    pu: &Bound,
    disc: &mut Discriminator,
    pd: &Bound,
    batch: &AdaptBatch,
    lambda: f64,
    alpha: f64,
    rng: &mut dyn rand::RngCore,
) -> Result<AdaptVars> {
    let ns = batch.source_x.shape()[0];
    let nt = batch.target_x.shape()[0];
    let x = g.constant(Tensor::cat_batch(&[
        &batch.source_x,
        &batch.target_x,
        &batch.target_aug,
    ]));
    let out = net.forward(g, pu, x)?;
    let ps = g.narrow_batch(out.probabilities, 0, ns);
    let pt = g.narrow_batch(out.probabilities, ns, nt);
    let pa = g.narrow_batch(out.probabilities, ns + nt, nt);
    let l_sup = soft_dice_op(g, ps, &batch.source_y, DICE_EPSILON)?;
    let aligned = warp_predictions(g, pt, &batch.specs);
    let l_pc = paired_consistency_op(g, aligned, pa)?;
    let pooled = pool_features(g, &out.features)?;
    let reversed = g.grad_reverse(pooled, lambda);
    let logits = disc.forward(g, pd, reversed, Mode::Train(rng))?;
    let labels: Vec<f64> = (0..ns + 2 * nt)
        .map(|i| if i < ns { 0.0 } else { 1.0 })
        .collect();
    let l_adv = adversarial_op(g, logits, &labels)?;
    let weighted = g.scale(l_pc, alpha);
    let partial = g.add(l_sup, weighted);
    let total = g.add(partial, l_adv);
    Ok(AdaptVars {
        l_sup,
        l_pc,
        l_adv,
        total,
    })
}

/// Adversarial + paired-consistency adaptation, warm-started from `base`.
///
/// Target slices come only from `split.unlabeled_pool` and no target label is read.
pub fn adapt(
    base: &Checkpoint,
    source: &Dataset,
    target: &Dataset,
    split: &ProtocolSplit,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<Trained> {
    if !split.protocol.is_uda() {
        return Err(Error::Contract(format!(
            "adapt called for {}",
            split.protocol
        )));
    }
    split.validate()?;
    cfg.validate()?;
    if split.unlabeled_pool.is_empty() {
        return Err(Error::Contract("empty unlabeled pool".into()));
    }
    let optim = &cfg.optim;
    let mut net = base.unet()?;
    if net.config() != &cfg.model {
        return Err(Error::Contract(
            "base checkpoint does not match the model configuration".into(),
        ));
    }
    let divisor = net.config().size_divisor();
    let source_pool = SlicePool::labelled_source(source, cfg.axis, divisor)?;
    let target_pool = SlicePool::images_only(target, &split.unlabeled_pool, cfg.axis, divisor)?;
    if (source_pool.height, source_pool.width) != (target_pool.height, target_pool.width) {
        return Err(Error::Shape(
            "source and target slices differ in size".into(),
        ));
    }
    let (h, w) = (target_pool.height, target_pool.width);
    let disc_cfg = cfg.discriminator_for((h, w));
    let mut disc = Discriminator::new(disc_cfg, &mut stream(seed, split.protocol, STREAM_INIT))?;

    let mut adam_main = Adam::new(net.params(), optim.main_lr);
    let mut adam_disc = Adam::new(disc.params(), optim.disc_lr);
    let mut batch_rng = stream(seed, split.protocol, STREAM_BATCH);
    let mut aug_rng = stream(seed, split.protocol, STREAM_AUG);
    let mut drop_rng = stream(seed, split.protocol, STREAM_DROPOUT);
    let half = optim.batch_size / 2;
    let mut history = Vec::with_capacity(optim.iterations as usize);
    for it in 0..optim.iterations {
        let si = source_pool.sample(&mut batch_rng, half);
        let ti = target_pool.sample(&mut batch_rng, half);
        let specs: Vec<AugmentationSpec> = (0..half)
            .map(|_| sample_spec(aug_rng.random(), &cfg.augmentation, h))
            .collect();
        let target_x = target_pool.images(&ti);
        let batch = AdaptBatch {
            source_x: source_pool.images(&si),
            source_y: source_pool.labels(&si),
            target_aug: augment_batch(&specs, &target_x),
            target_x,
            specs,
        };
        let lambda =
            disc.config().grl_lambda * grl_lambda(it, optim.iterations, optim.grl_ramp_fraction);
        let mut g = Graph::new();
        let pu = net.params().bind(&mut g);
        let pd = disc.params().bind(&mut g);
        let vars = adaptation_graph(
            &mut g,
            &net,
            &pu,
            &mut disc,
            &pd,
            &batch,
            lambda,
            optim.alpha_pc,
            &mut drop_rng,
        )?;
        let value = |v| g.value(v).data()[0];
        let losses = combine(
            value(vars.l_sup),
            value(vars.l_pc),
            value(vars.l_adv),
            optim.alpha_pc,
        );
        if !losses.total.is_finite() {
            return Err(Error::Contract(format!(
                "non-finite loss at iteration {it}"
            )));
        }
        g.backward(vars.total);
        let grads_main = pu.grads(&mut g, net.params());
        let grads_disc = pd.grads(&mut g, disc.params());
        adam_main.step(net.params_mut(), &grads_main);
        adam_disc.step(disc.params_mut(), &grads_disc);
        history.push(IterationLog {
            iteration: it,
            losses,
            lambda,
            target_subjects: target_pool.subjects(&ti),
        });
    }
    Ok(Trained {
        checkpoint: Checkpoint::from_model(
            &net,
            base.iteration + optim.iterations,
            Some(&adam_main),
        )
        .with_discriminator(&disc, Some(&adam_disc)),
        history,
        validation: Vec::new(),
        selected_iteration: optim.iterations,
    })
}

/// Soft-dice loss of `net` over every slice of a labelled pool.
fn pool_dice_loss(net: &UNet, pool: &SlicePool) -> Result<f64> {
    let (mut overlap, mut total) = (0.0, 0.0);
    let all: Vec<usize> = (0..pool.len()).collect();
    for chunk in all.chunks(PREDICT_CHUNK) {
        let p = net.predict(&pool.images(chunk))?;
        let t = pool.labels(chunk);
        overlap += p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        total += p.sum() + t.sum();
    }
    Ok(1.0 - (2.0 * overlap + DICE_EPSILON) / (total + DICE_EPSILON))
}

/// Fine-tune on the split's labelled target subjects, keeping the weights with
/// the lowest validation loss (checked every `validation_interval` iterations).
pub fn train_supervised_target(
    base: &Checkpoint,
    target: &Dataset,
    split: &ProtocolSplit,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<Trained> {
    if split.protocol != Protocol::Supervised {
        return Err(Error::Contract(format!(
            "supervised training called for {}",
            split.protocol
        )));
    }
    split.validate()?;
    cfg.validate()?;
    let validation = split
        .validation_subject
        .as_deref()
        .ok_or_else(|| Error::Contract("supervised split without validation subject".into()))?;
    let optim = &cfg.optim;
    let mut net = base.unet()?;
    let divisor = net.config().size_divisor();
    let train_pool =
        SlicePool::labelled_target(target, split, &split.supervised_pool, cfg.axis, divisor)?;
    let val_pool = SlicePool::labelled_target(target, split, [validation], cfg.axis, divisor)?;
    let mut adam = Adam::new(net.params(), optim.main_lr);
    let mut rng = stream(seed, Protocol::Supervised, STREAM_BATCH);
    let mut history = Vec::with_capacity(optim.iterations as usize);
    let mut points = Vec::new();
    let mut best: Option<(f64, u64, crate::network::ParamStore)> = None;
    for it in 0..optim.iterations {
        history.push(supervised_step(
            &mut net,
            &mut adam,
            &train_pool,
            &mut rng,
            optim.batch_size,
            it,
            true,
        )?);
        let done = it + 1;
        if done % optim.validation_interval == 0 {
            let loss = pool_dice_loss(&net, &val_pool)?;
            points.push(ValidationPoint {
                iteration: done,
                loss,
            });
            if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
                best = Some((loss, done, net.params().clone()));
            }
        }
    }
    let selected_iteration = match best {
        Some((_, at, params)) => {
            *net.params_mut() = params;
            at
        }
        None => optim.iterations,
    };
    Ok(Trained {
        checkpoint: Checkpoint::from_model(&net, base.iteration + selected_iteration, None),
        history,
        validation: points,
        selected_iteration,
    })
}

const PREDICT_CHUNK: usize = 8;

/// Per-voxel lesion probabilities of a volume, predicted slice by slice.
pub fn predict_probabilities(net: &UNet, volume: &Volume, axis: Axis) -> Result<Vec<f64>> {
    let dims = volume.dims();
    let (h, w) = plane_shape(dims, axis);
    let divisor = net.config().size_divisor();
    let (ph, pw) = (padded_extent(h, divisor), padded_extent(w, divisor));
    let planes = slice_buffer(volume.normalized().voxels(), dims, axis);
    let mut out = Vec::with_capacity(planes.len());
    for chunk in planes.chunks(PREDICT_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * ph * pw);
        for plane in chunk {
            data.extend(pad_plane(plane, h, w, ph, pw));
        }
        let probs = net.predict(&Tensor::new(&[chunk.len(), 1, ph, pw], data))?;
        for k in 0..chunk.len() {
            out.push(crop_plane(probs.plane(k, 0), pw, h, w));
        }
    }
    Ok(stack_buffer(&out, dims, axis))
}

/// Binary prediction: voxels whose probability exceeds `threshold`
/// (every voxel when `threshold` ≤ 0).
pub fn predict_volume(net: &UNet, volume: &Volume, threshold: f64, axis: Axis) -> Result<LabelMap> {
    let probs = predict_probabilities(net, volume, axis)?;
    LabelMap::from_bools(
        probs.iter().map(|&p| threshold <= 0.0 || p > threshold),
        volume.dims(),
        volume.subject_id(),
    )
}
