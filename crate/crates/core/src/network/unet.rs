use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamId, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub levels: usize,
    pub encoder_channels: Vec<usize>,
    pub first_kernel: usize,
    pub other_kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 5,
            encoder_channels: vec![64, 96, 128, 256, 512],
            first_kernel: 5,
            other_kernel: 3,
            in_channels: 1,
            out_channels: 1,
            leaky_slope: 0.01,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// A narrower network with the same topology.
    pub fn reduced(levels: usize, encoder_channels: Vec<usize>) -> Self {
        Self {
            levels,
            encoder_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Parameter("U-Net needs at least two levels".into()));
        }
        if self.encoder_channels.len() != self.levels {
            return Err(Error::Parameter(format!(
                "{} encoder channel counts for {} levels",
                self.encoder_channels.len(),
                self.levels
            )));
        }
        if self.encoder_channels.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Parameter("channel counts must be positive".into()));
        }
        if self.first_kernel.is_multiple_of(2) || self.other_kernel.is_multiple_of(2) {
            return Err(Error::Parameter("kernel sizes must be odd".into()));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Channel counts of the decoder depths tapped for the discriminator, fine to coarse.
    pub fn pyramid_channels(&self) -> Vec<usize> {
        self.encoder_channels[..self.levels - 1].to_vec()
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    pad: usize,
}

impl Conv {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_kaiming(
            format!("{name}.weight"),
            &[cout, cin, k, k],
            cin * k * k,
            rng,
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { w, b, pad: k / 2 }
    }

    fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p.var(self.w), Some(p.var(self.b)), 1, self.pad)
    }
}

/// One decoder depth's activations.
#[derive(Clone, Copy, Debug)]
pub struct PyramidLevel {
    /// Downsampling factor relative to the input (1, 2, 4, ...).
    pub stride: usize,
    pub channels: usize,
    pub activation: Var,
}

impl PyramidLevel {
    pub fn scale(&self) -> f64 {
        1.0 / self.stride as f64
    }
}

/// Decoder activations at every depth except the centre block, fine to coarse.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
}

pub struct UnetOutput {
    pub logits: Var,
    pub probabilities: Var,
    pub features: FeaturePyramid,
}

/// 2D U-Net: conv–instance-norm–leaky-ReLU blocks, max-pool down, bilinear up,
/// skip concatenation, sigmoid head.
#[derive(Clone, Debug)]
pub struct UNet {
    config: ModelConfig,
    params: ParamStore,
    encoder: Vec<[Conv; 2]>,
    decoder: Vec<[Conv; 2]>,
    head: Conv,
}

impl UNet {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ch = &config.encoder_channels;
        let mut store = ParamStore::new();
        let mut encoder = Vec::with_capacity(config.levels);
        for (i, &c) in ch.iter().enumerate() {
            let (cin, k) = if i == 0 {
                (config.in_channels, config.first_kernel)
            } else {
                (ch[i - 1], config.other_kernel)
            };
            let a = Conv::new(&mut store, &format!("enc{i}.0"), cin, c, k, rng);
            let b = Conv::new(
                &mut store,
                &format!("enc{i}.1"),
                c,
                c,
                config.other_kernel,
                rng,
            );
            encoder.push([a, b]);
        }
        let mut decoder = Vec::with_capacity(config.levels - 1);
        for i in 0..config.levels - 1 {
            let cin = ch[i + 1] + ch[i];
            let a = Conv::new(
                &mut store,
                &format!("dec{i}.0"),
                cin,
                ch[i],
                config.other_kernel,
                rng,
            );
            let b = Conv::new(
                &mut store,
                &format!("dec{i}.1"),
                ch[i],
                ch[i],
                config.other_kernel,
                rng,
            );
            decoder.push([a, b]);
        }
        let head = Conv::new(&mut store, "head", ch[0], config.out_channels, 1, rng);
        Ok(Self {
            config,
            params: store,
            encoder,
            decoder,
            head,
        })
    }

    /// Rebuild with the given parameter values (e.g. from a checkpoint).
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng)?;
        if net.params.names() != params.names()
            || net
                .params
                .tensors()
                .iter()
                .zip(params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Contract(
                "parameter layout does not match the model configuration".into(),
            ));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 4 {
            return Err(Error::Shape(format!(
                "expected N×C×H×W input, got {:?}",
                x.shape()
            )));
        }
        let (n, c, h, w) = x.dims4();
        let d = self.config.size_divisor();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c != self.config.in_channels {
            return Err(Error::Contract(format!(
                "input has {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!(
                "spatial size {h}×{w} is not divisible by {d}"
            )));
        }
        if !x.all_finite() {
            return Err(Error::Contract("non-finite input".into()));
        }
        Ok(())
    }

    fn block(&self, g: &mut Graph, p: &Bound, convs: &[Conv; 2], mut x: Var) -> Var {
        for conv in convs {
            x = conv.apply(g, p, x);
            x = g.instance_norm(x, self.config.norm_eps);
            x = g.leaky_relu(x, self.config.leaky_slope);
        }
        x
    }

    /// Forward pass on a tape. `params` must come from `self.params().bind*`.
    pub fn forward(&self, g: &mut Graph, params: &Bound, x: Var) -> Result<UnetOutput> {
        self.check_input(g.value(x))?;
        let levels = self.config.levels;
        let mut skips = Vec::with_capacity(levels);
        let mut h = x;
        for (i, convs) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = g.max_pool2(h);
            }
            h = self.block(g, params, convs, h);
            skips.push(h);
        }
        let mut pyramid = Vec::with_capacity(levels - 1);
        for i in (0..levels - 1).rev() {
            let skip = skips[i];
            let (_, _, sh, sw) = g.value(skip).dims4();
            let up = g.resize_bilinear(h, sh, sw);
            let cat = g.concat_channels(&[up, skip]);
            h = self.block(g, params, &self.decoder[i], cat);
            pyramid.push(PyramidLevel {
                stride: 1 << i,
                channels: self.config.encoder_channels[i],
                activation: h,
            });
        }
        pyramid.reverse();
        let logits = self.head.apply(g, params, h);
        let probabilities = g.sigmoid(logits);
        Ok(UnetOutput {
            logits,
            probabilities,
            features: FeaturePyramid { levels: pyramid },
        })
    }

    /// Probabilities for a batch with frozen parameters.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv)?;
        Ok(g.value(out.probabilities).clone())
    }
}

/// Resize every pyramid entry to the second-coarsest entry's grid and
/// concatenate along channels.
pub fn pool_features(g: &mut Graph, features: &FeaturePyramid) -> Result<Var> {
    let levels = &features.levels;
    if levels.is_empty() {
        return Err(Error::Contract("empty feature pyramid".into()));
    }
    let target = levels[levels.len().saturating_sub(2)].activation;
    let (_, _, th, tw) = g.value(target).dims4();
    let resized: Vec<Var> = levels
        .iter()
        .map(|l| g.resize_bilinear(l.activation, th, tw))
        .collect();
    Ok(g.concat_channels(&resized))
}
