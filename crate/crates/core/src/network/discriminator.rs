use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamId, ParamStore};
use crate::autograd::{conv_output_size, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Channels of the pooled feature map fed in.
    pub input_channels: usize,
    /// Spatial size `(h, w)` of the pooled feature map.
    pub input_size: (usize, usize),
    /// Output channels of the four stride-2 convolutions.
    pub conv_channels: Vec<usize>,
    /// Hidden fully connected widths after the flatten layer.
    pub fc_hidden: Vec<usize>,
    pub dropout: f64,
    pub grl_lambda: f64,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_channels: 544,
            input_size: (16, 16),
            conv_channels: vec![64, 128, 256, 512],
            fc_hidden: vec![256, 128],
            dropout: 0.5,
            grl_lambda: 1.0,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl DiscriminatorConfig {
    /// Spatial size after the convolution stack.
    pub fn conv_output(&self) -> (usize, usize) {
        let (mut h, mut w) = self.input_size;
        for _ in &self.conv_channels {
            h = conv_output_size(h, KERNEL, STRIDE, PAD);
            w = conv_output_size(w, KERNEL, STRIDE, PAD);
        }
        (h, w)
    }

    /// Width of the first fully connected layer.
    pub fn flatten_dim(&self) -> usize {
        let (h, w) = self.conv_output();
        self.conv_channels
            .last()
            .copied()
            .unwrap_or(self.input_channels)
            * h
            * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != 4 {
            return Err(Error::Parameter(
                "discriminator uses four convolutions".into(),
            ));
        }
        if self.input_channels == 0
            || self.conv_channels.contains(&0)
            || self.fc_hidden.contains(&0)
        {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        let min = 1 << self.conv_channels.len();
        let (h, w) = self.input_size;
        if h < min || w < min {
            return Err(Error::Shape(format!(
                "pooled features {h}×{w} are too small for {} stride-2 convolutions (need ≥ {min})",
                self.conv_channels.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter("dropout must lie in [0, 1)".into()));
        }
        if !(self.grl_lambda >= 0.0) {
            return Err(Error::Parameter(
                "gradient reversal coefficient must be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

/// Running batch-norm statistics of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub enum Mode<'a> {
    Train(&'a mut dyn rand::RngCore),
    Eval,
}

/// VGG-style domain classifier: four stride-2 conv + batch-norm layers,
/// fully connected layers with dropout, one logit per sample.
#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    convs: Vec<ConvBn>,
    running: Vec<RunningStats>,
    dense: Vec<Dense>,
    head: Dense,
}

impl Discriminator {
    /// Fails at construction when the configured input is too small.
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut running = Vec::new();
        let mut cin = config.input_channels;
        for (i, &c) in config.conv_channels.iter().enumerate() {
            let fan = cin * KERNEL * KERNEL;
            let w = store.add_kaiming(
                format!("conv{i}.weight"),
                &[c, cin, KERNEL, KERNEL],
                fan,
                rng,
            );
            let gamma = store.add(format!("bn{i}.weight"), Tensor::ones(&[c]));
            let beta = store.add(format!("bn{i}.bias"), Tensor::zeros(&[c]));
            convs.push(ConvBn { w, gamma, beta });
            running.push(RunningStats {
                mean: vec![0.0; c],
                var: vec![1.0; c],
            });
            cin = c;
        }
        let mut dense = Vec::new();
        let mut fin = config.flatten_dim();
        for (i, &h) in config.fc_hidden.iter().enumerate() {
            let w = store.add_kaiming(format!("fc{i}.weight"), &[h, fin], fin, rng);
            let b = store.add(format!("fc{i}.bias"), Tensor::zeros(&[h]));
            dense.push(Dense { w, b });
            fin = h;
        }
        let w = store.add_kaiming("head.weight", &[1, fin], fin, rng);
        let b = store.add("head.bias", Tensor::zeros(&[1]));
        Ok(Self {
            config,
            params: store,
            convs,
            running,
            dense,
            head: Dense { w, b },
        })
    }

    pub fn from_parts(
        config: DiscriminatorConfig,
        params: ParamStore,
        running: Vec<RunningStats>,
    ) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut d = Self::new(config, &mut rng)?;
        if d.params.names() != params.names() || running.len() != d.running.len() {
            return Err(Error::Contract(
                "discriminator state does not match its configuration".into(),
            ));
        }
        d.params = params;
        d.running = running;
        Ok(d)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    /// One logit per batch element. Training mode uses batch statistics
    /// (and updates the running estimates) plus dropout.
    pub fn forward(&mut self, g: &mut Graph, p: &Bound, x: Var, mut mode: Mode) -> Result<Var> {
        let (n, c, h, w) = g.value(x).dims4();
        if c != self.config.input_channels || (h, w) != self.config.input_size {
            return Err(Error::Shape(format!(
                "discriminator built for {}×{:?}, got {c}×{:?}",
                self.config.input_channels,
                self.config.input_size,
                (h, w)
            )));
        }
        let mut z = x;
        for (layer, stats) in self.convs.iter().zip(self.running.iter_mut()) {
            z = g.conv2d(z, p.var(layer.w), None, STRIDE, PAD);
            z = match mode {
                Mode::Train(_) => {
                    let (y, mean, var) = g.batch_norm_train(
                        z,
                        p.var(layer.gamma),
                        p.var(layer.beta),
                        self.config.bn_eps,
                    );
                    let (_, _, zh, zw) = g.value(z).dims4();
                    let count = (n * zh * zw) as f64;
                    let unbias = if count > 1.0 {
                        count / (count - 1.0)
                    } else {
                        1.0
                    };
                    let m = self.config.bn_momentum;
                    for ch in 0..mean.len() {
                        stats.mean[ch] = (1.0 - m) * stats.mean[ch] + m * mean[ch];
                        stats.var[ch] = (1.0 - m) * stats.var[ch] + m * var[ch] * unbias;
                    }
                    y
                }
                Mode::Eval => g.batch_norm_eval(
                    z,
                    p.var(layer.gamma),
                    p.var(layer.beta),
                    &stats.mean,
                    &stats.var,
                    self.config.bn_eps,
                ),
            };
            z = g.leaky_relu(z, self.config.leaky_slope);
        }
        let flat = self.config.flatten_dim();
        debug_assert_eq!(g.value(z).len(), n * flat);
        z = g.reshape(z, &[n, flat]);
        for layer in &self.dense {
            z = g.linear(z, p.var(layer.w), p.var(layer.b));
            z = g.leaky_relu(z, self.config.leaky_slope);
            if let Mode::Train(rng) = &mut mode {
                z = g.dropout(z, self.config.dropout, &mut **rng);
            }
        }
        let logit = g.linear(z, p.var(self.head.w), p.var(self.head.b));
        Ok(g.reshape(logit, &[n]))
    }

    /// Logits with frozen parameters in evaluation mode.
    pub fn logits(&mut self, pooled: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(pooled.clone());
        let y = self.forward(&mut g, &p, x, Mode::Eval)?;
        Ok(g.value(y).data().to_vec())
    }
}
