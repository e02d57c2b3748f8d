use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DiscriminatorConfig, RunningStats};
use super::params::ParamStore;
use super::unet::{ModelConfig, UNet};
use crate::error::{Error, Result};
use crate::protocols::optim::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorState {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    pub running: Vec<RunningStats>,
    pub optimizer: Option<Adam>,
}

/// Serialized training state. The discriminator is optional so inference-only
/// checkpoints stay small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub params: ParamStore,
    pub iteration: u64,
    pub optimizer: Option<Adam>,
    pub discriminator: Option<DiscriminatorState>,
}

impl Checkpoint {
    pub fn from_model(net: &UNet, iteration: u64, optimizer: Option<&Adam>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model_config: net.config().clone(),
            params: net.params().clone(),
            iteration,
            optimizer: optimizer.cloned(),
            discriminator: None,
        }
    }

    pub fn with_discriminator(mut self, disc: &Discriminator, optimizer: Option<&Adam>) -> Self {
        self.discriminator = Some(DiscriminatorState {
            config: disc.config().clone(),
            params: disc.params().clone(),
            running: disc.running_stats().to_vec(),
            optimizer: optimizer.cloned(),
        });
        self
    }

    pub fn unet(&self) -> Result<UNet> {
        UNet::from_params(self.model_config.clone(), self.params.clone())
    }

    pub fn discriminator(&self) -> Result<Option<Discriminator>> {
        self.discriminator
            .as_ref()
            .map(|d| {
                Discriminator::from_parts(d.config.clone(), d.params.clone(), d.running.clone())
            })
            .transpose()
    }

    /// Drop everything inference does not need.
    pub fn inference_only(&self) -> Self {
        Self {
            optimizer: None,
            discriminator: None,
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
