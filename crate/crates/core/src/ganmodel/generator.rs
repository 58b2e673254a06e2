//! U-Net generator with symmetric skip connections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    Activation, ActivationLayer, BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, Param, LEAKY_SLOPE,
};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Encoder filters of the full 256×256 architecture, outermost first.
pub const FULL_ENCODER: [usize; 8] = [64, 128, 256, 512, 512, 512, 512, 512];
/// Decoder filters, innermost first. The first three layers carry dropout.
pub const FULL_DECODER: [usize; 7] = [512, 512, 512, 512, 256, 128, 64];
pub const FULL_DROPOUT: [bool; 7] = [true, true, true, false, false, false, false];
const DROPOUT_LAYERS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub raster_size: usize,
    /// Encoder filters, outermost first.
    pub encoder: Vec<usize>,
    /// Decoder filters, innermost first; one fewer than the encoder levels.
    pub decoder: Vec<usize>,
    /// Whether each decoder layer applies dropout.
    pub dropout: Vec<bool>,
    pub dropout_rate: f32,
    /// Keep dropout active when predicting.
    pub inference_dropout: bool,
}

impl GeneratorSpec {
    /// The reference architecture, with innermost stages dropped until the
    /// bottleneck is 1×1 for rasters smaller than 256.
    pub fn for_raster(in_channels: usize, raster_size: usize) -> Result<Self> {
        if !raster_size.is_power_of_two() || raster_size < 4 {
            return Err(Error::InvalidConfig(format!(
                "generator needs a power-of-two raster >= 4, got {raster_size}"
            )));
        }
        let depth = (raster_size.trailing_zeros() as usize).min(FULL_ENCODER.len());
        let drop = FULL_ENCODER.len() - depth;
        let spec = Self {
            in_channels,
            out_channels: 1,
            raster_size,
            encoder: FULL_ENCODER[..depth].to_vec(),
            decoder: FULL_DECODER[drop..].to_vec(),
            // the noise source stays on the innermost decoder layers
            dropout: (0..depth - 1).map(|j| j < DROPOUT_LAYERS).collect(),
            dropout_rate: 0.5,
            inference_dropout: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.encoder.len() < 2 {
            return bad("generator needs at least two encoder levels".into());
        }
        if self.decoder.len() + 1 != self.encoder.len() || self.dropout.len() != self.decoder.len() {
            return bad(format!(
                "decoder must have {} layers with matching dropout flags",
                self.encoder.len() - 1
            ));
        }
        if self.out_channels != 1 {
            return bad("generator emits exactly one crown channel".into());
        }
        if self.in_channels == 0 {
            return bad("generator needs input channels".into());
        }
        let needed = 1usize << self.depth();
        if self.raster_size < needed || !self.raster_size.is_multiple_of(needed) {
            return bad(format!(
                "raster {} is smaller than 2^{} = {needed} required by the encoder",
                self.raster_size,
                self.depth()
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// `[LeakyReLU] → conv(4, stride 2) → [BatchNorm]`.
#[derive(Clone, Debug)]
struct DownBlock {
    act: Option<ActivationLayer>,
    conv: Conv2d,
    norm: Option<BatchNorm2d>,
}

/// `ReLU → deconv(4, stride 2) → BatchNorm → [Dropout]`.
#[derive(Clone, Debug)]
struct UpBlock {
    act: ActivationLayer,
    deconv: ConvTranspose2d,
    norm: BatchNorm2d,
    dropout: Option<Dropout>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    down: Vec<DownBlock>,
    up: Vec<UpBlock>,
    out_act: ActivationLayer,
    out_deconv: ConvTranspose2d,
    out_tanh: ActivationLayer,
    up_channels: Vec<usize>,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = spec.depth();
        let mut down = Vec::with_capacity(depth);
        let mut cin = spec.in_channels;
        for (k, &cout) in spec.encoder.iter().enumerate() {
            let outermost = k == 0;
            // batch-1 statistics over a 1×1 bottleneck are degenerate, so it stays unnormalized
            let innermost = k + 1 == depth;
            let normalized = !outermost && !innermost;
            down.push(DownBlock {
                act: (!outermost).then(|| ActivationLayer::new(Activation::LeakyRelu(LEAKY_SLOPE))),
                conv: Conv2d::new(cin, cout, 4, 2, 1, !normalized, &mut rng),
                norm: normalized.then(|| BatchNorm2d::new(cout, &mut rng)),
            });
            cin = cout;
        }
        let mut up = Vec::with_capacity(depth - 1);
        let mut up_channels = Vec::with_capacity(depth - 1);
        let mut cin = spec.encoder[depth - 1];
        for (j, (&cout, &drop)) in spec.decoder.iter().zip(&spec.dropout).enumerate() {
            if j > 0 {
                cin += spec.encoder[depth - 1 - j];
            }
            up.push(UpBlock {
                act: ActivationLayer::new(Activation::Relu),
                deconv: ConvTranspose2d::new(cin, cout, 4, 2, 1, false, &mut rng),
                norm: BatchNorm2d::new(cout, &mut rng),
                dropout: drop.then(|| Dropout::new(spec.dropout_rate)),
            });
            up_channels.push(cout);
            cin = cout;
        }
        let out_in = cin + spec.encoder[0];
        let out_deconv = ConvTranspose2d::new(out_in, spec.out_channels, 4, 2, 1, true, &mut rng);
        Ok(Self {
            up_channels,
            spec,
            down,
            up,
            out_act: ActivationLayer::new(Activation::Relu),
            out_deconv,
            out_tanh: ActivationLayer::new(Activation::Tanh),
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Maps `(B, C_in, H, W)` to `(B, 1, H, W)` in `(−1, 1)`, caching activations
    /// for [`Generator::backward`]. Dropout runs when `dropout` is set.
    pub fn forward(&mut self, x: &Tensor, dropout: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if x.c != self.spec.in_channels || x.h != self.spec.raster_size || x.w != self.spec.raster_size {
            return Err(Error::Shape(format!(
                "generator expects (B, {}, {s}, {s}), got {:?}",
                self.spec.in_channels,
                x.shape(),
                s = self.spec.raster_size
            )));
        }
        let mut skips: Vec<Tensor> = Vec::with_capacity(self.down.len());
        let mut h = x.clone();
        for block in &mut self.down {
            if let Some(act) = &mut block.act {
                h = act.forward(&h);
            }
            h = block.conv.forward(&h);
            if let Some(norm) = &mut block.norm {
                h = norm.forward(&h);
            }
            skips.push(h.clone());
        }
        let depth = skips.len();
        for (j, block) in self.up.iter_mut().enumerate() {
            let input = if j == 0 {
                h
            } else {
                Tensor::concat_channels(&h, &skips[depth - 1 - j])?
            };
            h = block.act.forward(&input);
            h = block.deconv.forward(&h);
            h = block.norm.forward(&h);
            if let Some(d) = &mut block.dropout {
                h = d.forward(&h, dropout, rng);
            }
        }
        let input = Tensor::concat_channels(&h, &skips[0])?;
        let h = self.out_act.forward(&input);
        let h = self.out_deconv.forward(&h);
        Ok(self.out_tanh.forward(&h))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the tanh output) and accumulates
    /// parameter gradients.
    pub fn backward(&mut self, d_out: &Tensor) {
        let depth = self.down.len();
        let mut d_skips: Vec<Option<Tensor>> = vec![None; depth];
        let add_skip = |slot: &mut Option<Tensor>, g: Tensor| match slot {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        };

        let g = self.out_tanh.backward(d_out);
        let g = self.out_deconv.backward(&g, true);
        let g = self.out_act.backward(&g);
        let last = *self.up_channels.last().expect("decoder has layers");
        let (mut d_h, d_skip0) = g.split_channels(last);
        add_skip(&mut d_skips[0], d_skip0);

        for j in (0..self.up.len()).rev() {
            let block = &mut self.up[j];
            let mut g = d_h;
            if let Some(d) = &mut block.dropout {
                g = d.backward(&g);
            }
            let g = block.norm.backward(&g, true);
            let g = block.deconv.backward(&g, true);
            let g = block.act.backward(&g);
            if j == 0 {
                d_h = g;
            } else {
                let (dh, ds) = g.split_channels(self.up_channels[j - 1]);
                add_skip(&mut d_skips[depth - 1 - j], ds);
                d_h = dh;
            }
        }
        // d_h is now the gradient w.r.t. the bottleneck (last encoder output)
        add_skip(&mut d_skips[depth - 1], d_h);

        for k in (0..depth).rev() {
            let mut g = d_skips[k].take().expect("every encoder level receives a gradient");
            let block = &mut self.down[k];
            if let Some(norm) = &mut block.norm {
                g = norm.backward(&g, true);
            }
            g = block.conv.backward(&g, true);
            if let Some(act) = &mut block.act {
                g = act.backward(&g);
            }
            if k > 0 {
                add_skip(&mut d_skips[k - 1], g);
            }
        }
    }

    /// Parameters in a fixed order (encoder, decoder, output layer).
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = Vec::new();
        for b in &mut self.down {
            ps.extend(b.conv.params_mut());
            if let Some(n) = &mut b.norm {
                ps.extend(n.params_mut());
            }
        }
        for b in &mut self.up {
            ps.extend(b.deconv.params_mut());
            ps.extend(b.norm.params_mut());
        }
        ps.extend(self.out_deconv.params_mut());
        ps
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Spatial size and channels of the innermost feature map.
    pub fn bottleneck_shape(&self) -> (usize, usize) {
        let size = self.spec.raster_size >> self.spec.depth();
        (size, *self.spec.encoder.last().expect("encoder non-empty"))
    }
}
