//! The stochastic transform applied to target images for paired consistency.
//!
//! Every retained transform is differentiable with respect to the image:
//! affine resampling (rotation, scale, shear, translation), a smooth
//! multiplicative bias field, and a k-space phase perturbation. Only the
//! spatial part is reapplied to predictions so the two outputs line up.

mod intensity;
mod spatial;

use std::f64::consts::FRAC_PI_4;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use intensity::{
    apply_bias, apply_intensity, apply_intensity_vjp, apply_kspace, bias_field, bias_terms,
};
pub use spatial::{apply_spatial, apply_spatial_vjp, Interpolation};

use crate::autograd::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Closed interval `[lo, hi]` a parameter is drawn from uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub affine: bool,
    pub bias_field: bool,
    pub kspace: bool,
    pub rotation_deg: Range,
    pub scale: Range,
    pub shear: Range,
    /// Fraction of the image extent.
    pub translation: Range,
    pub bias_order: usize,
    pub bias_coeff: Range,
    /// Phase of the perturbed k-space lines, radians.
    pub kspace_phase: Range,
    /// Largest fraction of k-space lines perturbed.
    pub kspace_max_line_fraction: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            affine: true,
            bias_field: true,
            kspace: true,
            rotation_deg: Range::new(-10.0, 10.0),
            scale: Range::new(0.9, 1.1),
            shear: Range::new(-0.1, 0.1),
            translation: Range::new(-0.1, 0.1),
            bias_order: 3,
            bias_coeff: Range::new(-0.5, 0.5),
            kspace_phase: Range::new(-FRAC_PI_4, FRAC_PI_4),
            kspace_max_line_fraction: 0.1,
        }
    }
}

impl AugmentationConfig {
    /// Every family disabled: sampling yields the identity spec.
    pub fn identity() -> Self {
        Self {
            affine: false,
            bias_field: false,
            kspace: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("rotation_deg", self.rotation_deg, 0.0),
            ("scale", self.scale, 1.0),
            ("shear", self.shear, 0.0),
            ("translation", self.translation, 0.0),
            ("bias_coeff", self.bias_coeff, 0.0),
            ("kspace_phase", self.kspace_phase, 0.0),
        ];
        for (name, range, identity) in checks {
            if !(range.lo <= range.hi) || !range.lo.is_finite() || !range.hi.is_finite() {
                return Err(Error::Parameter(format!("{name}: invalid range {range:?}")));
            }
            if !range.contains(identity) {
                return Err(Error::Parameter(format!(
                    "{name}: range {range:?} must contain the identity value {identity}"
                )));
            }
        }
        if self.scale.lo <= 0.0 {
            return Err(Error::Parameter("scale must stay positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kspace_max_line_fraction) {
            return Err(Error::Parameter(
                "kspace_max_line_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Phase perturbation of a set of k-space lines (rows of the centred spectrum).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KspaceParams {
    pub lines: Vec<usize>,
    pub phase: f64,
}

/// One realization of the augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub rotation_deg: f64,
    pub scale: [f64; 2],
    pub shear: f64,
    pub translation: [f64; 2],
    pub bias_coeffs: Vec<f64>,
    pub kspace: KspaceParams,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: [1.0, 1.0],
            shear: 0.0,
            translation: [0.0, 0.0],
            bias_coeffs: Vec::new(),
            kspace: KspaceParams::default(),
            seed: 0,
        }
    }

    /// Pure translation by whole fractions of the extent.
    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            translation: [dx, dy],
            ..Self::identity()
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation_deg: deg,
            ..Self::identity()
        }
    }

    pub fn is_spatial_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.scale == [1.0, 1.0]
            && self.shear == 0.0
            && self.translation == [0.0, 0.0]
    }
}

/// Draw a spec from `config`, deterministically in `seed`.
/// `lines` is the number of k-space lines of the images it will be applied to.
pub fn sample_spec(seed: u64, config: &AugmentationConfig, lines: usize) -> AugmentationSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = AugmentationSpec {
        seed,
        ..AugmentationSpec::identity()
    };
    if config.affine {
        spec.rotation_deg = config.rotation_deg.sample(&mut rng);
        spec.scale = [config.scale.sample(&mut rng), config.scale.sample(&mut rng)];
        spec.shear = config.shear.sample(&mut rng);
        spec.translation = [
            config.translation.sample(&mut rng),
            config.translation.sample(&mut rng),
        ];
    }
    if config.bias_field {
        spec.bias_coeffs = bias_terms(config.bias_order)
            .iter()
            .map(|_| config.bias_coeff.sample(&mut rng))
            .collect();
    }
    if config.kspace && lines > 0 {
        let max_lines = (config.kspace_max_line_fraction * lines as f64).floor() as usize;
        let count = rng.random_range(0..=max_lines);
        if count > 0 {
            let start = rng.random_range(0..=lines - count);
            spec.kspace.lines = (start..start + count).collect();
            spec.kspace.phase = config.kspace_phase.sample(&mut rng);
        }
    }
    spec
}

/// Full input-side transform: spatial resampling, then bias field and k-space.
pub fn augment_image(spec: &AugmentationSpec, image: &[f64], h: usize, w: usize) -> Vec<f64> {
    let warped = apply_spatial(spec, image, h, w, Interpolation::Bilinear);
    apply_intensity(spec, &warped, h, w)
}

/// Warp a probability map with the spatial part only, clamped to `[0, 1]`.
pub fn apply_to_prediction(
    spec: &AugmentationSpec,
    prediction: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    apply_spatial(spec, prediction, h, w, Interpolation::Bilinear)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

/// Augment every sample of an `N×1×H×W` batch with its own spec.
pub fn augment_batch(specs: &[AugmentationSpec], batch: &Tensor) -> Tensor {
    let (n, c, h, w) = batch.dims4();
    assert_eq!(specs.len(), n, "one spec per batch element");
    let mut out = Tensor::zeros(batch.shape());
    for (s, spec) in specs.iter().enumerate() {
        for ch in 0..c {
            let v = augment_image(spec, batch.plane(s, ch), h, w);
            out.plane_mut(s, ch).copy_from_slice(&v);
        }
    }
    out
}

/// Tape op: spatially warp each sample of an `N×C×H×W` prediction and clamp to `[0, 1]`.
pub fn warp_predictions(g: &mut Graph, x: Var, specs: &[AugmentationSpec]) -> Var {
    let (n, c, h, w) = g.value(x).dims4();
    assert_eq!(specs.len(), n, "one spec per batch element");
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for (s, spec) in specs.iter().enumerate() {
        for ch in 0..c {
            let v = apply_spatial(spec, g.value(x).plane(s, ch), h, w, Interpolation::Bilinear);
            out.plane_mut(s, ch).copy_from_slice(&v);
        }
    }
    let specs = specs.to_vec();
    let warped = g.push(
        out,
        &[x],
        Box::new(move |ctx: &BackwardCtx| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for (s, spec) in specs.iter().enumerate() {
                for ch in 0..c {
                    let d = apply_spatial_vjp(spec, ctx.grad.plane(s, ch), h, w);
                    dx.plane_mut(s, ch).copy_from_slice(&d);
                }
            }
            vec![Some(dx)]
        }),
    );
    g.clamp(warped, 0.0, 1.0)
}

#[cfg(test)]
mod tests;
