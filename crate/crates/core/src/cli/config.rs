use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Protocol, SyntheticShiftParams};
use crate::error::{Error, Result};
use crate::evaluation::{Connectivity, DEFAULT_ALPHA};
use crate::protocols::ProtocolConfig;

/// Environment variable that overrides `paths.output`.
pub const OUTPUT_ENV: &str = "TTUDA_OUTPUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub source: PathBuf,
    pub target: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            source: "data/source".into(),
            target: "data/target".into(),
            output: "out".into(),
        }
    }
}

/// Synthetic corpus written by `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub image_size: usize,
    pub depth: usize,
    pub gamma: f64,
    /// Ten coefficients = a complete order-3 polynomial.
    pub bias_coeffs: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_source: 8,
            n_target: 5,
            image_size: 64,
            depth: 8,
            gamma: 1.8,
            bias_coeffs: vec![0.0, 0.3, -0.25, 0.2, 0.15, -0.3, 0.1, -0.1, 0.2, -0.15],
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn shift(&self) -> SyntheticShiftParams {
        SyntheticShiftParams {
            gamma: self.gamma,
            bias_coeffs: self.bias_coeffs.clone(),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub connectivity: Connectivity,
    pub alpha: f64,
    /// Pixel magnification of overlay images.
    pub overlay_scale: u32,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Eighteen,
            alpha: DEFAULT_ALPHA,
            overlay_scale: 4,
        }
    }
}

/// Everything the command line needs, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub training: ProtocolConfig,
    pub metrics: MetricOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::TestTimeUda,
            seeds: vec![0],
            paths: Paths::default(),
            synth: SynthConfig::default(),
            training: ProtocolConfig::default(),
            metrics: MetricOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (defaults when `None`), then apply the output override.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => {
                        Error::Config(format!("config file {} not found", p.display()))
                    }
                    _ => Error::Io(e),
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Some(out) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
            cfg.paths.output = out.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.training.validate()?;
        self.synth
            .shift()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.synth.image_size < 8 || self.synth.depth == 0 {
            return Err(Error::Config(
                "synth.image_size must be ≥ 8 and synth.depth ≥ 1".into(),
            ));
        }
        if !(self.metrics.alpha > 0.0 && self.metrics.alpha < 1.0) {
            return Err(Error::Config("metrics.alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
