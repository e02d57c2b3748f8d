//! Training loops and the five experimental regimes.

pub mod optim;
mod pool;
mod run;
mod train;

use serde::{Deserialize, Serialize};

pub use pool::{crop_plane, pad_plane, padded_extent, plane_shape};
pub use run::{mask_checksum, run_protocol, run_protocol_with_base, RunRecord};
pub use train::{
    adapt, predict_probabilities, predict_volume, train_source, train_supervised_target,
    IterationLog, Trained, ValidationPoint,
};

use crate::augmentation::AugmentationConfig;
use crate::data::Axis;
use crate::error::{Error, Result};
use crate::network::{DiscriminatorConfig, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub iterations: u64,
    /// Slices per step; split evenly between source and target in UDA regimes.
    pub batch_size: usize,
    pub main_lr: f64,
    pub disc_lr: f64,
    pub alpha_pc: f64,
    /// Fraction of the run over which the reversal coefficient ramps up.
    pub grl_ramp_fraction: f64,
    /// Validation period of supervised fine-tuning.
    pub validation_interval: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 15_000,
            batch_size: 20,
            main_lr: 1e-3,
            disc_lr: 1e-4,
            alpha_pc: 1.0,
            grl_ramp_fraction: 0.25,
            validation_interval: 250,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return bad("iterations must be ≥ 1".into());
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad(format!(
                "batch_size {} must be even and ≥ 2",
                self.batch_size
            ));
        }
        if !(self.main_lr > 0.0) || !(self.disc_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.alpha_pc >= 0.0) {
            return bad("alpha_pc must be ≥ 0".into());
        }
        if !(self.grl_ramp_fraction > 0.0 && self.grl_ramp_fraction <= 1.0) {
            return bad("grl_ramp_fraction must lie in (0, 1]".into());
        }
        if self.validation_interval == 0 {
            return bad("validation_interval must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Reversal coefficient at `iteration`: `2 / (1 + e^(-10p)) - 1` with `p` the
/// progress through the ramp horizon, then exactly 1 once the ramp is over.
pub fn grl_lambda(iteration: u64, iterations: u64, ramp_fraction: f64) -> f64 {
    let horizon = ramp_fraction * iterations as f64;
    let p = iteration as f64 / horizon;
    if p >= 1.0 {
        1.0
    } else {
        2.0 / (1.0 + (-10.0 * p).exp()) - 1.0
    }
}

/// Everything a protocol run needs besides data and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub model: ModelConfig,
    /// Input channels and size are recomputed from the model and slice size.
    pub discriminator: DiscriminatorConfig,
    pub optim: OptimConfig,
    pub augmentation: AugmentationConfig,
    pub axis: Axis,
    pub threshold: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            optim: OptimConfig::default(),
            augmentation: AugmentationConfig::default(),
            axis: Axis::Axial,
            threshold: 0.5,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.optim.validate()?;
        self.augmentation
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Discriminator settings sized for the model's pooled features on `patch`.
    pub fn discriminator_for(&self, patch: (usize, usize)) -> DiscriminatorConfig {
        let sized = crate::network::discriminator_for(&self.model, patch);
        DiscriminatorConfig {
            input_channels: sized.input_channels,
            input_size: sized.input_size,
            leaky_slope: self.model.leaky_slope,
            ..self.discriminator.clone()
        }
    }
}

#[cfg(test)]
mod tests;
