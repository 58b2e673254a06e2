//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Each layer keeps the activations of its most recent forward call; a
//! `backward` call must follow the matching `forward` before the layer is
//! used again.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{col2im, gemm, im2col, ConvGeom, Tensor};

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f32 = 0.02;
pub const LEAKY_SLOPE: f32 = 0.2;
const BN_EPS: f32 = 1e-5;

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn gaussian(len: usize, mean: f32, std: f32, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(mean, std).expect("finite std");
        Self::new((0..len).map(|_| normal.sample(rng)).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Strided 2D convolution, weights `Cout × Cin × k × k`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
    cols: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight: Param::gaussian(cout * cin * kernel * kernel, 0.0, INIT_STD, rng),
            bias: bias.then(|| Param::new(vec![0.0; cout])),
            input: None,
            cols: Vec::new(),
        }
    }

    fn geom(&self, x: &Tensor) -> ConvGeom {
        ConvGeom {
            channels: self.cin,
            in_h: x.h,
            in_w: x.w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let g = self.geom(x);
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = Tensor::zeros(x.n, self.cout, oh, ow);
        self.cols.resize(g.col_rows() * g.col_cols(), 0.0);
        for b in 0..x.n {
            im2col(x.item(b), g, &mut self.cols);
            let dst = out.item_mut(b);
            gemm(
                self.cout,
                g.col_rows(),
                g.col_cols(),
                &self.weight.value,
                false,
                &self.cols,
                false,
                0.0,
                dst,
            );
            if let Some(bias) = &self.bias {
                for (ch, plane) in dst.chunks_mut(oh * ow).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bias.value[ch]);
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    /// Accumulates parameter gradients when `param_grads`; returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor, param_grads: bool) -> Tensor {
        let x = self.input.take().expect("conv backward without forward");
        let g = self.geom(&x);
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut dcols = vec![0.0; g.col_rows() * g.col_cols()];
        for b in 0..x.n {
            let dyb = dy.item(b);
            if param_grads {
                im2col(x.item(b), g, &mut self.cols);
                gemm(
                    self.cout,
                    g.col_cols(),
                    g.col_rows(),
                    dyb,
                    false,
                    &self.cols,
                    true,
                    1.0,
                    &mut self.weight.grad,
                );
                if let Some(bias) = &mut self.bias {
                    for (ch, plane) in dyb.chunks(g.col_cols()).enumerate() {
                        bias.grad[ch] += plane.iter().sum::<f32>();
                    }
                }
            }
            gemm(
                g.col_rows(),
                self.cout,
                g.col_cols(),
                &self.weight.value,
                true,
                dyb,
                false,
                0.0,
                &mut dcols,
            );
            col2im(&dcols, g, dx.item_mut(b));
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            ps.push(b);
        }
        ps
    }
}

/// Transposed convolution ("deconvolution"), weights `Cin × Cout × k × k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
    cols: Vec<f32>,
}

impl ConvTranspose2d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight: Param::gaussian(cin * cout * kernel * kernel, 0.0, INIT_STD, rng),
            bias: bias.then(|| Param::new(vec![0.0; cout])),
            input: None,
            cols: Vec::new(),
        }
    }

    /// Geometry of the equivalent forward convolution on the output plane.
    fn geom(&self, x: &Tensor) -> ConvGeom {
        let out_h = (x.h - 1) * self.stride + self.kernel - 2 * self.pad;
        let out_w = (x.w - 1) * self.stride + self.kernel - 2 * self.pad;
        ConvGeom {
            channels: self.cout,
            in_h: out_h,
            in_w: out_w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "deconv input channels");
        let g = self.geom(x);
        debug_assert_eq!((g.out_h(), g.out_w()), (x.h, x.w));
        let mut out = Tensor::zeros(x.n, self.cout, g.in_h, g.in_w);
        self.cols.resize(g.col_rows() * g.col_cols(), 0.0);
        for b in 0..x.n {
            gemm(
                g.col_rows(),
                self.cin,
                g.col_cols(),
                &self.weight.value,
                true,
                x.item(b),
                false,
                0.0,
                &mut self.cols,
            );
            let dst = out.item_mut(b);
            col2im(&self.cols, g, dst);
            if let Some(bias) = &self.bias {
                for (ch, plane) in dst.chunks_mut(g.in_h * g.in_w).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bias.value[ch]);
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor, param_grads: bool) -> Tensor {
        let x = self.input.take().expect("deconv backward without forward");
        let g = self.geom(&x);
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for b in 0..x.n {
            let dyb = dy.item(b);
            im2col(dyb, g, &mut self.cols);
            gemm(
                self.cin,
                g.col_rows(),
                g.col_cols(),
                &self.weight.value,
                false,
                &self.cols,
                false,
                0.0,
                dx.item_mut(b),
            );
            if param_grads {
                gemm(
                    self.cin,
                    g.col_cols(),
                    g.col_rows(),
                    x.item(b),
                    false,
                    &self.cols,
                    true,
                    1.0,
                    &mut self.weight.grad,
                );
                if let Some(bias) = &mut self.bias {
                    for (ch, plane) in dyb.chunks(g.in_h * g.in_w).enumerate() {
                        bias.grad[ch] += plane.iter().sum::<f32>();
                    }
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            ps.push(b);
        }
        ps
    }
}

/// Batch normalization over `(N, H, W)` per channel, always using the
/// statistics of the current batch.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub scale: Param,
    pub shift: Param,
    normalized: Option<Tensor>,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            scale: Param::gaussian(channels, 1.0, INIT_STD, rng),
            shift: Param::new(vec![0.0; channels]),
            normalized: None,
            inv_std: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let plane = x.plane_len();
        let count = (x.n * plane) as f64;
        let mut xhat = x.clone();
        self.inv_std = vec![0.0; x.c];
        let mut out = Tensor::zeros(x.n, x.c, x.h, x.w);
        for ch in 0..x.c {
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for b in 0..x.n {
                for &v in &x.item(b)[ch * plane..(ch + 1) * plane] {
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                }
            }
            let mean = sum / count;
            let var = (sq / count - mean * mean).max(0.0);
            let inv = 1.0 / (var + BN_EPS as f64).sqrt();
            self.inv_std[ch] = inv as f32;
            let (gamma, beta) = (self.scale.value[ch], self.shift.value[ch]);
            for b in 0..x.n {
                let range = ch * plane..(ch + 1) * plane;
                let src = &x.item(b)[range.clone()];
                let nrm = &mut xhat.item_mut(b)[range.clone()];
                for (h, &v) in nrm.iter_mut().zip(src) {
                    *h = ((v as f64 - mean) * inv) as f32;
                }
                let nrm = &xhat.item(b)[range.clone()];
                let dst = &mut out.item_mut(b)[range];
                for (o, &h) in dst.iter_mut().zip(nrm) {
                    *o = gamma * h + beta;
                }
            }
        }
        self.normalized = Some(xhat);
        out
    }

    pub fn backward(&mut self, dy: &Tensor, param_grads: bool) -> Tensor {
        let xhat = self.normalized.take().expect("batchnorm backward without forward");
        let plane = xhat.plane_len();
        let count = (xhat.n * plane) as f32;
        let mut dx = Tensor::zeros(xhat.n, xhat.c, xhat.h, xhat.w);
        for ch in 0..xhat.c {
            let range = ch * plane..(ch + 1) * plane;
            let mut sum_dy = 0.0f32;
            let mut sum_dy_xhat = 0.0f32;
            for b in 0..xhat.n {
                for (&g, &h) in dy.item(b)[range.clone()].iter().zip(&xhat.item(b)[range.clone()]) {
                    sum_dy += g;
                    sum_dy_xhat += g * h;
                }
            }
            if param_grads {
                self.scale.grad[ch] += sum_dy_xhat;
                self.shift.grad[ch] += sum_dy;
            }
            let k = self.scale.value[ch] * self.inv_std[ch] / count;
            for b in 0..xhat.n {
                let g = &dy.item(b)[range.clone()];
                let h = &xhat.item(b)[range.clone()];
                let dst = &mut dx.item_mut(b)[range.clone()];
                for ((d, &gv), &hv) in dst.iter_mut().zip(g).zip(h) {
                    *d = k * (count * gv - sum_dy - hv * sum_dy_xhat);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.scale, &mut self.shift]
    }
}

/// Elementwise nonlinearities; the cache holds what the derivative needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f32),
    Relu,
    Tanh,
}

#[derive(Clone, Debug)]
pub struct ActivationLayer {
    pub kind: Activation,
    cache: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        match self.kind {
            Activation::LeakyRelu(s) => y.data.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= s
                }
            }),
            Activation::Relu => y.data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => y.data.iter_mut().for_each(|v| *v = v.tanh()),
        }
        // tanh caches its output, the rectifiers their input
        self.cache = Some(if self.kind == Activation::Tanh {
            y.clone()
        } else {
            x.clone()
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("activation backward without forward");
        let mut dx = dy.clone();
        match self.kind {
            Activation::LeakyRelu(s) => {
                for (d, &x) in dx.data.iter_mut().zip(&cache.data) {
                    if x < 0.0 {
                        *d *= s;
                    }
                }
            }
            Activation::Relu => {
                for (d, &x) in dx.data.iter_mut().zip(&cache.data) {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &y) in dx.data.iter_mut().zip(&cache.data) {
                    *d *= 1.0 - y * y;
                }
            }
        }
        dx
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 − rate)`.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor, active: bool, rng: &mut ChaCha8Rng) -> Tensor {
        if !active || self.rate <= 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f32> = (0..x.data.len())
            .map(|_| if rng.random::<f32>() < self.rate { 0.0 } else { keep })
            .collect();
        let mut y = x.clone();
        y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        match self.mask.take() {
            Some(mask) => {
                let mut dx = dy.clone();
                dx.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                dx
            }
            None => dy.clone(),
        }
    }
}
