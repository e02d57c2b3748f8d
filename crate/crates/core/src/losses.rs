//! Supervised dice, paired-consistency dice and adversarial cross-entropy.

use serde::{Deserialize, Serialize};

use crate::autograd::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smoothing term added to numerator and denominator of both dice forms.
pub const DICE_EPSILON: f64 = 1e-5;

/// Loss components of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_sup: f64,
    pub l_pc: f64,
    pub l_adv: f64,
    pub alpha: f64,
    pub total: f64,
}

pub fn combine(l_sup: f64, l_pc: f64, l_adv: f64, alpha: f64) -> LossBundle {
    LossBundle {
        l_sup,
        l_pc,
        l_adv,
        alpha,
        total: l_sup + alpha * l_pc + l_adv,
    }
}

fn check_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `1 − (2·Σpt + ε) / (Σp + Σt + ε)`.
pub fn soft_dice_loss(pred: &Tensor, target: &Tensor, epsilon: f64) -> Result<f64> {
    check_shapes(pred, target)?;
    if !(epsilon > 0.0) {
        return Err(Error::Parameter("epsilon must be positive".into()));
    }
    Ok(dice_terms(pred.data(), target.data(), epsilon).0)
}

/// Loss value and the partial derivatives' shared pieces `(loss, num, den)`.
fn dice_terms(p: &[f64], t: &[f64], eps: f64) -> (f64, f64, f64) {
    let inter: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let sp: f64 = p.iter().sum();
    let st: f64 = t.iter().sum();
    let num = 2.0 * inter + eps;
    let den = sp + st + eps;
    (1.0 - num / den, num, den)
}

/// Gradient of the dice loss with respect to the first argument.
fn dice_grad_first(other: &[f64], num: f64, den: f64, scale: f64) -> Vec<f64> {
    // d/dp_i [1 − num/den] = −(2·o_i·den − num) / den²
    let inv = scale / (den * den);
    other
        .iter()
        .map(|&o| -(2.0 * o * den - num) * inv)
        .collect()
}

/// Paired-consistency loss: dice disagreement between two probability maps, symmetric.
pub fn paired_consistency_loss(y_hat: &Tensor, y_hat_aug: &Tensor) -> Result<f64> {
    check_shapes(y_hat, y_hat_aug)?;
    Ok(dice_terms(y_hat.data(), y_hat_aug.data(), DICE_EPSILON).0)
}

/// Mean binary cross-entropy with logits in the overflow-free form
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn adversarial_loss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Contract("one label per logit required".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract("domain labels must be 0 or 1".into()));
    }
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| bce_term(z, y))
        .sum::<f64>()
        / n)
}

#[inline]
fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Tape op: dice loss of `pred` against a constant binary target, one sum over the whole tensor.
pub fn soft_dice_op(g: &mut Graph, pred: Var, target: &Tensor, epsilon: f64) -> Result<Var> {
    check_shapes(g.value(pred), target)?;
    let (loss, num, den) = dice_terms(g.value(pred).data(), target.data(), epsilon);
    let target = target.clone();
    Ok(g.push(
        Tensor::scalar(loss),
        &[pred],
        Box::new(move |ctx: &BackwardCtx| {
            let d = dice_grad_first(target.data(), num, den, ctx.grad.data()[0]);
            vec![Some(Tensor::new(target.shape(), d))]
        }),
    ))
}

/// Tape op: paired-consistency loss with one sum over the whole batch.
///
/// Pooling the sums over the batch, as for the supervised dice, keeps
/// lesion-free slices from dominating: on its own such a slice scores a
/// disagreement near 1 whatever the predictions, and its gradient rewards
/// predicting foreground in both maps.
pub fn paired_consistency_op(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    check_shapes(g.value(a), g.value(b))?;
    let shape = g.value(a).shape().to_vec();
    let (loss, num, den) = dice_terms(g.value(a).data(), g.value(b).data(), DICE_EPSILON);
    Ok(g.push(
        Tensor::scalar(loss),
        &[a, b],
        Box::new(move |ctx: &BackwardCtx| {
            let k = ctx.grad.data()[0];
            let (va, vb) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            vec![
                ctx.needs[0].then(|| Tensor::new(&shape, dice_grad_first(vb, num, den, k))),
                ctx.needs[1].then(|| Tensor::new(&shape, dice_grad_first(va, num, den, k))),
            ]
        }),
    ))
}

/// Tape op: mean binary cross-entropy of `logits` (shape `[n]`) against constant labels.
pub fn adversarial_op(g: &mut Graph, logits: Var, labels: &[f64]) -> Result<Var> {
    let loss = adversarial_loss(g.value(logits).data(), labels)?;
    let labels = labels.to_vec();
    Ok(g.push(
        Tensor::scalar(loss),
        &[logits],
        Box::new(move |ctx: &BackwardCtx| {
            let z = ctx.inputs[0];
            let k = ctx.grad.data()[0] / labels.len() as f64;
            let d = z
                .data()
                .iter()
                .zip(&labels)
                .map(|(&zv, &y)| k * (stable_sigmoid(zv) - y))
                .collect();
            vec![Some(Tensor::new(z.shape(), d))]
        }),
    ))
}
