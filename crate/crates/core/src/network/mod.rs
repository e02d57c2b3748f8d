//! Segmentation backbone, multi-depth feature tap, gradient reversal and
//! domain discriminator.

mod checkpoint;
mod discriminator;
mod params;
mod unet;

pub use checkpoint::{Checkpoint, DiscriminatorState, CHECKPOINT_VERSION};
pub use discriminator::{Discriminator, DiscriminatorConfig, Mode, RunningStats};
pub use params::{Bound, ParamId, ParamStore};
pub use unet::{pool_features, FeaturePyramid, ModelConfig, PyramidLevel, UNet, UnetOutput};

use crate::autograd::{Graph, Var};

/// Identity in the forward pass; scales the backward gradient by `-lambda`.
pub fn grad_reverse(g: &mut Graph, x: Var, lambda: f64) -> Var {
    g.grad_reverse(x, lambda)
}

/// Discriminator configuration matched to a U-Net and input patch size.
pub fn discriminator_for(model: &ModelConfig, patch: (usize, usize)) -> DiscriminatorConfig {
    let pyramid = model.pyramid_channels();
    let penultimate = pyramid.len().saturating_sub(2);
    let stride = 1 << penultimate;
    DiscriminatorConfig {
        input_channels: pyramid.iter().sum(),
        input_size: (patch.0 / stride, patch.1 / stride),
        ..DiscriminatorConfig::default()
    }
}

#[cfg(test)]
mod tests;
