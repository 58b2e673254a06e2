//! Convolutional discriminator over (condition, crown) pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, ActivationLayer, BatchNorm2d, Conv2d, Param, LEAKY_SLOPE};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const FULL_DISCRIMINATOR: [usize; 4] = [64, 128, 256, 512];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    /// Condition channels; the crown channel is appended to them.
    pub condition_channels: usize,
    pub raster_size: usize,
    pub channels: Vec<usize>,
}

impl DiscriminatorSpec {
    pub fn for_raster(condition_channels: usize, raster_size: usize) -> Result<Self> {
        let spec = Self {
            condition_channels,
            raster_size,
            channels: FULL_DISCRIMINATOR.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn in_channels(&self) -> usize {
        self.condition_channels + 1
    }

    /// Side length of the score map before reduction.
    pub fn score_map_size(&self) -> usize {
        self.raster_size >> self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let needed = 1usize << self.channels.len();
        if self.channels.is_empty() || self.condition_channels == 0 {
            return Err(Error::InvalidConfig("discriminator needs layers and a condition".into()));
        }
        if self.raster_size < needed || !self.raster_size.is_multiple_of(needed) {
            return Err(Error::InvalidConfig(format!(
                "discriminator needs a raster divisible by {needed}, got {}",
                self.raster_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv2d,
    norm: Option<BatchNorm2d>,
    act: ActivationLayer,
}

/// `C64 → C128 → C256 → C512` (stride 2, LeakyReLU 0.2, BatchNorm after all
/// but the first), a 3×3 projection to one channel, the spatial mean and a
/// sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    blocks: Vec<Block>,
    head: Conv2d,
    map_shape: Option<[usize; 4]>,
}

/// Scores in `(0, 1)` together with the pre-sigmoid logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub probabilities: Vec<f32>,
    pub logits: Vec<f32>,
    /// Score map area before reduction.
    pub map_area: usize,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = spec.in_channels();
        let mut blocks = Vec::new();
        for (k, &cout) in spec.channels.iter().enumerate() {
            let normalized = k > 0;
            blocks.push(Block {
                conv: Conv2d::new(cin, cout, 4, 2, 1, !normalized, &mut rng),
                norm: normalized.then(|| BatchNorm2d::new(cout, &mut rng)),
                act: ActivationLayer::new(Activation::LeakyRelu(LEAKY_SLOPE)),
            });
            cin = cout;
        }
        let head = Conv2d::new(cin, 1, 3, 1, 1, true, &mut rng);
        Ok(Self {
            spec,
            blocks,
            head,
            map_shape: None,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Scores a batch of concatenated `(condition, crown)` inputs.
    pub fn forward(&mut self, input: &Tensor) -> Result<Scores> {
        if input.c != self.spec.in_channels() {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {}",
                self.spec.in_channels(),
                input.c
            )));
        }
        let mut h = input.clone();
        for b in &mut self.blocks {
            h = b.conv.forward(&h);
            if let Some(n) = &mut b.norm {
                h = n.forward(&h);
            }
            h = b.act.forward(&h);
        }
        let map = self.head.forward(&h);
        self.map_shape = Some(map.shape());
        let area = map.plane_len();
        let logits: Vec<f32> = (0..map.n)
            .map(|b| map.item(b).iter().map(|&v| v as f64).sum::<f64>() as f32 / area as f32)
            .collect();
        let probabilities = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(Scores {
            probabilities,
            logits,
            map_area: area,
        })
    }

    /// Backpropagates the gradient w.r.t. the logits and returns the gradient
    /// w.r.t. the input. Parameter gradients accumulate only when `param_grads`.
    pub fn backward(&mut self, d_logits: &[f32], param_grads: bool) -> Tensor {
        let [n, c, h, w] = self.map_shape.take().expect("discriminator backward without forward");
        let area = (h * w) as f32;
        let mut d_map = Tensor::zeros(n, c, h, w);
        for (b, &g) in d_logits.iter().enumerate() {
            d_map.item_mut(b).fill(g / area);
        }
        let mut g = self.head.backward(&d_map, param_grads);
        for b in self.blocks.iter_mut().rev() {
            g = b.act.backward(&g);
            if let Some(n) = &mut b.norm {
                g = n.backward(&g, param_grads);
            }
            g = b.conv.backward(&g, param_grads);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = Vec::new();
        for b in &mut self.blocks {
            ps.extend(b.conv.params_mut());
            if let Some(n) = &mut b.norm {
                ps.extend(n.params_mut());
            }
        }
        ps.extend(self.head.params_mut());
        ps
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
