use serde::{Deserialize, Serialize};

use super::components::{components_hit, label_components, Connectivity};
use super::distance::squared_distance_to;
use crate::data::{Dims, LabelMap};
use crate::error::{Error, Result};

/// Why a metric value is conventional or undefined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    BothEmpty,
    EmptyPrediction,
    EmptyGroundTruth,
}

impl Flag {
    pub fn name(self) -> &'static str {
        match self {
            Flag::BothEmpty => "both_empty",
            Flag::EmptyPrediction => "empty_prediction",
            Flag::EmptyGroundTruth => "empty_ground_truth",
        }
    }
}

/// A metric value; `None` when undefined for this case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub value: Option<f64>,
    pub flag: Option<Flag>,
}

impl Scored {
    fn ok(value: f64) -> Self {
        Self {
            value: Some(value),
            flag: None,
        }
    }

    fn flagged(value: Option<f64>, flag: Flag) -> Self {
        Self {
            value,
            flag: Some(flag),
        }
    }
}

fn check(pred: &[u8], gt: &[u8]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "prediction has {} voxels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn check_maps(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Contract(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

fn emptiness(pred_empty: bool, gt_empty: bool) -> Option<Flag> {
    match (pred_empty, gt_empty) {
        (true, true) => Some(Flag::BothEmpty),
        (true, false) => Some(Flag::EmptyPrediction),
        (false, true) => Some(Flag::EmptyGroundTruth),
        _ => None,
    }
}

/// Voxel confusion counts `(tp, fp, fn)`.
pub fn confusion(pred: &[u8], gt: &[u8]) -> Result<(usize, usize, usize)> {
    check(pred, gt)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p != 0, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok((tp, fp, fn_))
}

/// `2|P∩G| / (|P|+|G|)`; 1 when both are empty, 0 when exactly one is.
pub fn dice_masks(pred: &[u8], gt: &[u8]) -> Result<Scored> {
    let (tp, fp, fn_) = confusion(pred, gt)?;
    let (np, ng) = (tp + fp, tp + fn_);
    Ok(match emptiness(np == 0, ng == 0) {
        Some(Flag::BothEmpty) => Scored::flagged(Some(1.0), Flag::BothEmpty),
        Some(flag) => Scored::flagged(Some(0.0), flag),
        None => Scored::ok(2.0 * tp as f64 / (np + ng) as f64),
    })
}

/// Foreground voxels with a face neighbour outside the mask (the volume edge counts as outside).
pub fn boundary(mask: &[u8], dims: Dims) -> Vec<bool> {
    let [d, h, w] = dims;
    let mut out = vec![false; mask.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if mask[i] == 0 {
                    continue;
                }
                let off = |dz: isize, dy: isize, dx: isize| {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    nz < 0
                        || ny < 0
                        || nx < 0
                        || nz >= d as isize
                        || ny >= h as isize
                        || nx >= w as isize
                        || mask[(nz as usize * h + ny as usize) * w + nx as usize] == 0
                };
                out[i] = off(-1, 0, 0)
                    || off(1, 0, 0)
                    || off(0, -1, 0)
                    || off(0, 1, 0)
                    || off(0, 0, -1)
                    || off(0, 0, 1);
            }
        }
    }
    out
}

/// Length of the volume's bounding-box diagonal in mm.
pub fn bounding_diagonal(dims: Dims, spacing: [f64; 3]) -> f64 {
    dims.iter()
        .zip(spacing)
        .map(|(&n, s)| (n as f64 * s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Symmetric Hausdorff distance (mm) between the two boundary voxel sets.
pub fn hausdorff_masks(pred: &[u8], gt: &[u8], dims: Dims, spacing: [f64; 3]) -> Result<Scored> {
    check(pred, gt)?;
    if pred.len() != dims.iter().product::<usize>() {
        return Err(Error::Contract("mask length does not match dims".into()));
    }
    let pe = pred.iter().all(|&v| v == 0);
    let ge = gt.iter().all(|&v| v == 0);
    if let Some(flag) = emptiness(pe, ge) {
        return Ok(Scored::flagged(
            Some(bounding_diagonal(dims, spacing)),
            flag,
        ));
    }
    let bp = boundary(pred, dims);
    let bg = boundary(gt, dims);
    let directed = |from: &[bool], to: &[bool]| {
        let dist = squared_distance_to(to, dims, spacing);
        from.iter()
            .zip(&dist)
            .filter(|(f, _)| **f)
            .map(|(_, &d2)| d2)
            .fold(0.0, f64::max)
    };
    Ok(Scored::ok(
        directed(&bp, &bg).max(directed(&bg, &bp)).sqrt(),
    ))
}

/// Lesion-wise `(ltpr, lfpr)` over connected components.
pub fn lesion_rates_masks(
    pred: &[u8],
    gt: &[u8],
    dims: Dims,
    connectivity: Connectivity,
) -> Result<(Scored, Scored)> {
    check(pred, gt)?;
    let (gl, gn) = label_components(gt, dims, connectivity);
    let (pl, pn) = label_components(pred, dims, connectivity);
    let ltpr = if gn == 0 {
        Scored::flagged(
            None,
            if pn == 0 {
                Flag::BothEmpty
            } else {
                Flag::EmptyGroundTruth
            },
        )
    } else {
        Scored::ok(components_hit(&gl, gn, pred) as f64 / gn as f64)
    };
    let lfpr = if pn == 0 {
        Scored::flagged(
            Some(0.0),
            if gn == 0 {
                Flag::BothEmpty
            } else {
                Flag::EmptyPrediction
            },
        )
    } else {
        Scored::ok((pn - components_hit(&pl, pn, gt)) as f64 / pn as f64)
    };
    Ok((ltpr, lfpr))
}

/// Voxelwise `(ppv, sensitivity)`; undefined on zero denominators.
pub fn ppv_sensitivity_masks(pred: &[u8], gt: &[u8]) -> Result<(Scored, Scored)> {
    let (tp, fp, fn_) = confusion(pred, gt)?;
    let ratio = |num: usize, den: usize, flag: Flag| {
        if den == 0 {
            Scored::flagged(None, flag)
        } else {
            Scored::ok(num as f64 / den as f64)
        }
    };
    let both = tp + fp == 0 && tp + fn_ == 0;
    let pick = |f: Flag| if both { Flag::BothEmpty } else { f };
    Ok((
        ratio(tp, tp + fp, pick(Flag::EmptyPrediction)),
        ratio(tp, tp + fn_, pick(Flag::EmptyGroundTruth)),
    ))
}

/// `(relative, absolute)` volume difference: `|Vp − Vg| / Vg` and `|Vp − Vg|` in mm³.
pub fn volume_difference_masks(
    pred: &[u8],
    gt: &[u8],
    spacing: [f64; 3],
) -> Result<(Scored, Scored)> {
    check(pred, gt)?;
    let vp = pred.iter().filter(|&&v| v != 0).count() as f64;
    let vg = gt.iter().filter(|&&v| v != 0).count() as f64;
    let voxel: f64 = spacing.iter().product();
    let abs = Scored::ok((vp - vg).abs() * voxel);
    let rel = if vg == 0.0 {
        Scored::flagged(
            None,
            if vp == 0.0 {
                Flag::BothEmpty
            } else {
                Flag::EmptyGroundTruth
            },
        )
    } else {
        Scored::ok((vp - vg).abs() / vg)
    };
    Ok((rel, abs))
}

pub fn dice(pred: &LabelMap, gt: &LabelMap) -> Result<Scored> {
    check_maps(pred, gt)?;
    dice_masks(pred.read(), gt.read())
}

pub fn hausdorff(pred: &LabelMap, gt: &LabelMap, spacing: [f64; 3]) -> Result<Scored> {
    check_maps(pred, gt)?;
    hausdorff_masks(pred.read(), gt.read(), gt.dims(), spacing)
}

pub fn lesion_rates(
    pred: &LabelMap,
    gt: &LabelMap,
    connectivity: Connectivity,
) -> Result<(Scored, Scored)> {
    check_maps(pred, gt)?;
    lesion_rates_masks(pred.read(), gt.read(), gt.dims(), connectivity)
}

pub fn ppv_sensitivity(pred: &LabelMap, gt: &LabelMap) -> Result<(Scored, Scored)> {
    check_maps(pred, gt)?;
    ppv_sensitivity_masks(pred.read(), gt.read())
}

pub fn volume_difference(
    pred: &LabelMap,
    gt: &LabelMap,
    spacing: [f64; 3],
) -> Result<(Scored, Scored)> {
    check_maps(pred, gt)?;
    volume_difference_masks(pred.read(), gt.read(), spacing)
}
