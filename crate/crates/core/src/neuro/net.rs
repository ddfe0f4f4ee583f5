use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, deconv2d, deconv2d_backward, leaky_relu,
    leaky_relu_backward, sigmoid, tanh_out, tanh_out_backward, BatchNormCache, Mode, DECONV_KERNEL,
};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CONV_KERNEL: usize = 3;
pub const CONV_PAD: usize = 1;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3x3,
    Deconv4x4,
    Batchnorm,
    LeakyRelu,
    TanhOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output channels for convolutions; ignored otherwise.
    pub filters: usize,
    pub stride: usize,
    pub leaky_slope: f64,
}

impl LayerSpec {
    pub fn conv(filters: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Conv3x3,
            filters,
            stride,
            leaky_slope: 0.2,
        }
    }

    pub fn deconv(filters: usize) -> Self {
        Self {
            kind: LayerKind::Deconv4x4,
            filters,
            stride: 2,
            leaky_slope: 0.2,
        }
    }

    pub fn batchnorm() -> Self {
        Self {
            kind: LayerKind::Batchnorm,
            filters: 0,
            stride: 1,
            leaky_slope: 0.2,
        }
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Self {
            kind: LayerKind::LeakyRelu,
            filters: 0,
            stride: 1,
            leaky_slope: slope,
        }
    }

    pub fn tanh_out() -> Self {
        Self {
            kind: LayerKind::TanhOut,
            filters: 0,
            stride: 1,
            leaky_slope: 0.2,
        }
    }

    /// `(channels, size)` after this layer.
    fn propagate(&self, channels: usize, size: usize) -> Result<(usize, usize)> {
        match self.kind {
            LayerKind::Conv3x3 => {
                if self.filters == 0 || !(self.stride == 1 || self.stride == 2) {
                    return Err(Error::Config(format!("invalid convolution layer {:?}", self)));
                }
                if self.stride == 2 && size % 2 != 0 {
                    return Err(Error::Shape(format!("stride-2 convolution on odd size {}", size)));
                }
                Ok((self.filters, size / self.stride))
            }
            LayerKind::Deconv4x4 => {
                if self.filters == 0 || self.stride != 2 {
                    return Err(Error::Config(format!("invalid deconvolution layer {:?}", self)));
                }
                Ok((self.filters, size * 2))
            }
            LayerKind::LeakyRelu if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) => {
                Err(Error::Config(format!("leaky slope {} outside [0, 1)", self.leaky_slope)))
            }
            _ => Ok((channels, size)),
        }
    }
}

/// Layer lists for both networks plus the discriminator tap indices.
///
/// Generator skips: every encoder `leaky_relu` output is concatenated onto
/// the first later decoder `leaky_relu` output of the same spatial size.
/// The discriminator ends in a single-filter convolution whose map is
/// averaged and passed through a sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub image_channels: usize,
    pub image_size: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
    pub tap_layers: Vec<usize>,
}

/// Static wiring derived from a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// `(encoder layer, decoder layer, decoder channels before concat)`.
    pub skips: Vec<(usize, usize, usize)>,
    /// Input channels seen by each encoder, decoder and discriminator layer.
    pub encoder_in: Vec<usize>,
    pub decoder_in: Vec<usize>,
    pub discriminator_in: Vec<usize>,
    /// `(channels, size)` of every tap.
    pub tap_shapes: Vec<(usize, usize)>,
    pub depth: usize,
}

impl NetworkSpec {
    /// Conv/BN/LeakyReLU stride-2 encoder blocks with the given filters, a
    /// mirrored deconvolution decoder and a discriminator of stride-2 blocks
    /// tapped after each block.
    pub fn unet(image_channels: usize, image_size: usize, generator: &[usize], discriminator: &[usize], slope: f64) -> Self {
        let mut encoder = Vec::new();
        for &f in generator {
            encoder.extend([LayerSpec::conv(f, 2), LayerSpec::batchnorm(), LayerSpec::leaky_relu(slope)]);
        }
        let mut decoder = Vec::new();
        for &f in generator.iter().rev().skip(1) {
            decoder.extend([LayerSpec::deconv(f), LayerSpec::batchnorm(), LayerSpec::leaky_relu(slope)]);
        }
        decoder.extend([LayerSpec::deconv(image_channels), LayerSpec::tanh_out()]);
        let mut disc = Vec::new();
        let mut tap_layers = Vec::new();
        for &f in discriminator {
            disc.extend([LayerSpec::conv(f, 2), LayerSpec::batchnorm(), LayerSpec::leaky_relu(slope)]);
            tap_layers.push(disc.len() - 1);
        }
        disc.push(LayerSpec::conv(1, 1));
        Self {
            image_channels,
            image_size,
            encoder,
            decoder,
            discriminator: disc,
            tap_layers,
        }
    }

    /// 64x64 RGB, generator (16, 32, 64), discriminator (16, 32, 64).
    pub fn desk() -> Self {
        Self::unet(3, 64, &[16, 32, 64], &[16, 32, 64], 0.2)
    }

    /// Two levels of four and eight filters on 16x16 inputs.
    pub fn tiny() -> Self {
        Self::unet(3, 16, &[4, 8], &[4, 8], 0.2)
    }

    pub fn plan(&self) -> Result<Plan> {
        if self.image_channels == 0 || self.image_size == 0 {
            return Err(Error::Config("image channels and size must be positive".into()));
        }
        let (mut c, mut s) = (self.image_channels, self.image_size);
        let mut encoder_in = Vec::new();
        let mut sources: Vec<(usize, usize, usize)> = Vec::new(); // (layer, channels, size)
        let mut depth = 0;
        for (i, l) in self.encoder.iter().enumerate() {
            encoder_in.push(c);
            if l.kind == LayerKind::Conv3x3 && l.stride == 2 {
                depth += 1;
            }
            (c, s) = l.propagate(c, s)?;
            if l.kind == LayerKind::LeakyRelu {
                sources.push((i, c, s));
            }
        }
        // the deepest block feeds the decoder directly
        if sources.last().map(|x| x.2) == Some(s) {
            sources.pop();
        }
        let mut decoder_in = Vec::new();
        let mut skips = Vec::new();
        for (j, l) in self.decoder.iter().enumerate() {
            decoder_in.push(c);
            (c, s) = l.propagate(c, s)?;
            if l.kind == LayerKind::LeakyRelu {
                if let Some(pos) = sources.iter().position(|src| src.2 == s) {
                    let (i, sc, _) = sources.remove(pos);
                    skips.push((i, j, c));
                    c += sc;
                }
            }
        }
        if c != self.image_channels || s != self.image_size {
            return Err(Error::Config(format!(
                "generator maps {}x{}x{} to {}x{}x{}",
                self.image_channels, self.image_size, self.image_size, c, s, s
            )));
        }
        if self.decoder.last().map(|l| l.kind) != Some(LayerKind::TanhOut) {
            return Err(Error::Config("generator must end in tanh_out".into()));
        }

        let (mut c, mut s) = (2 * self.image_channels, self.image_size);
        let mut discriminator_in = Vec::new();
        let mut shapes = Vec::new();
        for l in &self.discriminator {
            discriminator_in.push(c);
            (c, s) = l.propagate(c, s)?;
            shapes.push((c, s));
        }
        match self.discriminator.last() {
            Some(l) if l.kind == LayerKind::Conv3x3 && l.filters == 1 => {}
            _ => return Err(Error::Config("discriminator must end in a one-filter convolution".into())),
        }
        let mut tap_shapes = Vec::new();
        for &t in &self.tap_layers {
            let shape = *shapes
                .get(t)
                .ok_or_else(|| Error::Config(format!("tap layer {} out of range", t)))?;
            tap_shapes.push(shape);
        }
        Ok(Plan {
            skips,
            encoder_in,
            decoder_in,
            discriminator_in,
            tap_shapes,
            depth,
        })
    }
}

/// A layer with its parameters and the activations kept for backward.
#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv {
        weights: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        input: Option<Tensor<T>>,
    },
    Deconv {
        weights: Tensor<T>,
        bias: Tensor<T>,
        input: Option<Tensor<T>>,
    },
    BatchNorm {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        cache: Option<BatchNormCache<T>>,
    },
    LeakyRelu {
        slope: T,
        input: Option<Tensor<T>>,
    },
    TanhOut {
        output: Option<Tensor<T>>,
    },
}

fn normal_tensor<T: Scalar>(shape: [usize; 4], mean: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let dist = Normal::new(mean, INIT_STD).expect("positive std");
    let n = shape.iter().product();
    let mut t = Tensor::from_raw(shape, (0..n).map(|_| T::lit(dist.sample(rng))).collect());
    t.grad_mut();
    t
}

fn zero_param<T: Scalar>(shape: [usize; 4]) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    t.grad_mut();
    t
}

fn add_grad<T: Scalar>(param: &mut Tensor<T>, grad: &[T]) {
    for (g, &d) in param.grad_mut().iter_mut().zip(grad) {
        *g += d;
    }
}

fn missing_cache() -> Error {
    Error::Argument("backward called without a preceding forward pass".into())
}

impl<T: Scalar> Layer<T> {
    fn build(spec: &LayerSpec, in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        match spec.kind {
            LayerKind::Conv3x3 => Layer::Conv {
                weights: normal_tensor([spec.filters, in_channels, CONV_KERNEL, CONV_KERNEL], 0.0, rng),
                bias: zero_param([1, spec.filters, 1, 1]),
                stride: spec.stride,
                input: None,
            },
            LayerKind::Deconv4x4 => Layer::Deconv {
                weights: normal_tensor([in_channels, spec.filters, DECONV_KERNEL, DECONV_KERNEL], 0.0, rng),
                bias: zero_param([1, spec.filters, 1, 1]),
                input: None,
            },
            LayerKind::Batchnorm => Layer::BatchNorm {
                gamma: normal_tensor([1, in_channels, 1, 1], 1.0, rng),
                beta: zero_param([1, in_channels, 1, 1]),
                running_mean: vec![T::zero(); in_channels],
                running_var: vec![T::one(); in_channels],
                cache: None,
            },
            LayerKind::LeakyRelu => Layer::LeakyRelu {
                slope: T::lit(spec.leaky_slope),
                input: None,
            },
            LayerKind::TanhOut => Layer::TanhOut { output: None },
        }
    }

    /// Forward pass without touching caches or running statistics.
    fn apply(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv { weights, bias, stride, .. } => conv2d(x, weights, bias.data(), *stride, CONV_PAD),
            Layer::Deconv { weights, bias, .. } => deconv2d(x, weights, bias.data()),
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => {
                let (mut rm, mut rv) = (running_mean.clone(), running_var.clone());
                Ok(batchnorm(x, gamma.data(), beta.data(), &mut rm, &mut rv, mode)?.0)
            }
            Layer::LeakyRelu { slope, .. } => Ok(leaky_relu(x, *slope)),
            Layer::TanhOut { .. } => Ok(tanh_out(x)),
        }
    }

    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv {
                weights,
                bias,
                stride,
                input,
            } => {
                let y = conv2d(&x, weights, bias.data(), *stride, CONV_PAD)?;
                *input = Some(x);
                Ok(y)
            }
            Layer::Deconv { weights, bias, input } => {
                let y = deconv2d(&x, weights, bias.data())?;
                *input = Some(x);
                Ok(y)
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                cache,
            } => {
                let (y, c) = batchnorm(&x, gamma.data(), beta.data(), running_mean, running_var, mode)?;
                *cache = Some(c);
                Ok(y)
            }
            Layer::LeakyRelu { slope, input } => {
                let y = leaky_relu(&x, *slope);
                *input = Some(x);
                Ok(y)
            }
            Layer::TanhOut { output } => {
                let y = tanh_out(&x);
                *output = Some(y.clone());
                Ok(y)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv {
                weights,
                bias,
                stride,
                input,
            } => {
                let x = input.as_ref().ok_or_else(missing_cache)?;
                let g = conv2d_backward(x, weights, *stride, CONV_PAD, dy)?;
                add_grad(weights, g.weights.data());
                add_grad(bias, &g.bias);
                Ok(g.input)
            }
            Layer::Deconv { weights, bias, input } => {
                let x = input.as_ref().ok_or_else(missing_cache)?;
                let g = deconv2d_backward(x, weights, dy)?;
                add_grad(weights, g.weights.data());
                add_grad(bias, &g.bias);
                Ok(g.input)
            }
            Layer::BatchNorm { gamma, beta, cache, .. } => {
                let c = cache.as_ref().ok_or_else(missing_cache)?;
                let (dx, dg, db) = batchnorm_backward(c, gamma.data(), dy)?;
                add_grad(gamma, &dg);
                add_grad(beta, &db);
                Ok(dx)
            }
            Layer::LeakyRelu { slope, input } => {
                let x = input.as_ref().ok_or_else(missing_cache)?;
                leaky_relu_backward(x, *slope, dy)
            }
            Layer::TanhOut { output } => {
                let y = output.as_ref().ok_or_else(missing_cache)?;
                tanh_out_backward(y, dy)
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv { weights, bias, .. } | Layer::Deconv { weights, bias, .. } => vec![weights, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv { weights, bias, .. } | Layer::Deconv { weights, bias, .. } => vec![weights, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    fn running_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } => vec![running_mean, running_var],
            _ => Vec::new(),
        }
    }

    fn running(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } => vec![running_mean, running_var],
            _ => Vec::new(),
        }
    }
}

fn accumulate<T: Scalar>(into: &mut Tensor<T>, other: &Tensor<T>) -> Result<()> {
    other.ensure_shape(into.shape(), "gradient accumulation")?;
    for (a, &b) in into.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
    Ok(())
}

/// Parameter and running-statistic access shared by both networks.
pub trait Network<T: Scalar> {
    fn layers_mut(&mut self) -> Vec<&mut Layer<T>>;
    fn layers(&self) -> Vec<&Layer<T>>;

    /// Parameters in a fixed order (weights then bias, gamma then beta,
    /// layer by layer).
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut().into_iter().flat_map(|l| l.params_mut()).collect()
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    /// Running means and variances of every batch norm layer.
    fn running_stats_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers_mut().into_iter().flat_map(|l| l.running_mut()).collect()
    }

    fn running_stats(&self) -> Vec<&Vec<T>> {
        self.layers().into_iter().flat_map(|l| l.running()).collect()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// U-Net generator; output is `(tanh + 1) / 2` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Generator<T: Scalar = f32> {
    spec: NetworkSpec,
    plan: Plan,
    encoder: Vec<Layer<T>>,
    decoder: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> for Generator<T> {
    fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).collect()
    }

    fn layers(&self) -> Vec<&Layer<T>> {
        self.encoder.iter().chain(self.decoder.iter()).collect()
    }
}

impl<T: Scalar> Generator<T> {
    /// Weights drawn from N(0, 0.02), batch norm scales from N(1, 0.02),
    /// biases zero.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let plan = spec.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = spec
            .encoder
            .iter()
            .zip(&plan.encoder_in)
            .map(|(l, &c)| Layer::build(l, c, &mut rng))
            .collect();
        let decoder = spec
            .decoder
            .iter()
            .zip(&plan.decoder_in)
            .map(|(l, &c)| Layer::build(l, c, &mut rng))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            plan,
            encoder,
            decoder,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let unit = 1usize << self.plan.depth;
        if x.channels() != self.spec.image_channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {}",
                self.spec.image_channels,
                x.channels()
            )));
        }
        if x.height() % unit != 0 || x.width() % unit != 0 {
            return Err(Error::Shape(format!(
                "generator input {}x{} is not divisible by {}",
                x.width(),
                x.height(),
                unit
            )));
        }
        Ok(())
    }

    fn run(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; self.encoder.len()];
        let mut h = x.clone();
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            h = layer.forward(h, mode)?;
            if self.plan.skips.iter().any(|s| s.0 == i) {
                saved[i] = Some(h.clone());
            }
        }
        for (j, layer) in self.decoder.iter_mut().enumerate() {
            h = layer.forward(h, mode)?;
            if let Some(&(i, _, _)) = self.plan.skips.iter().find(|s| s.1 == j) {
                let skip = saved[i].as_ref().expect("skip source precedes its target");
                h = Tensor::concat_channels(&h, skip)?;
            }
        }
        Ok(h)
    }

    /// Forward pass keeping activations for [`Generator::backward`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.run(x, mode)
    }

    /// Eval-mode forward pass that leaves the network untouched.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; self.encoder.len()];
        let mut h = x.clone();
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.apply(&h, Mode::Eval)?;
            if self.plan.skips.iter().any(|s| s.0 == i) {
                saved[i] = Some(h.clone());
            }
        }
        for (j, layer) in self.decoder.iter().enumerate() {
            h = layer.apply(&h, Mode::Eval)?;
            if let Some(&(i, _, _)) = self.plan.skips.iter().find(|s| s.1 == j) {
                let skip = saved[i].as_ref().expect("skip source precedes its target");
                h = Tensor::concat_channels(&h, skip)?;
            }
        }
        Ok(h)
    }

    /// Backpropagates `d_output`, accumulating parameter gradients; returns
    /// the input gradient.
    pub fn backward(&mut self, d_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; self.encoder.len()];
        let mut g = d_output.clone();
        for j in (0..self.decoder.len()).rev() {
            if let Some(&(i, _, channels)) = self.plan.skips.iter().find(|s| s.1 == j) {
                let (main, skip) = g.split_channels(channels)?;
                skip_grads[i] = Some(skip);
                g = main;
            }
            g = self.decoder[j].backward(&g)?;
        }
        for i in (0..self.encoder.len()).rev() {
            if let Some(s) = skip_grads[i].take() {
                accumulate(&mut g, &s)?;
            }
            g = self.encoder[i].backward(&g)?;
        }
        Ok(g)
    }
}

/// Discriminator result for a batch of (condition, candidate) pairs.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput<T> {
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
    pub taps: Vec<Tensor<T>>,
}

/// Conditional CNN classifier over channel-concatenated pairs.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar = f32> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    head_shape: Option<[usize; 4]>,
}

impl<T: Scalar> Network<T> for Discriminator<T> {
    fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        self.layers.iter_mut().collect()
    }

    fn layers(&self) -> Vec<&Layer<T>> {
        self.layers.iter().collect()
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let plan = spec.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .discriminator
            .iter()
            .zip(&plan.discriminator_in)
            .map(|(l, &c)| Layer::build(l, c, &mut rng))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            head_shape: None,
        })
    }

    pub fn forward(&mut self, pair: &Tensor<T>, mode: Mode) -> Result<DiscriminatorOutput<T>> {
        if pair.channels() != 2 * self.spec.image_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {}",
                2 * self.spec.image_channels,
                pair.channels()
            )));
        }
        let mut h = pair.clone();
        let mut taps = Vec::with_capacity(self.spec.tap_layers.len());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(h, mode)?;
            if self.spec.tap_layers.contains(&i) {
                taps.push(h.clone());
            }
        }
        let plane = T::from_usize_lossy(h.height() * h.width());
        let logits: Vec<T> = (0..h.batch()).map(|b| h.item(b).iter().copied().sum::<T>() / plane).collect();
        let probabilities = logits.iter().map(|&z| sigmoid(z)).collect();
        self.head_shape = Some(h.shape());
        Ok(DiscriminatorOutput {
            logits,
            probabilities,
            taps,
        })
    }

    /// Backpropagates logit gradients plus optional tap gradients (in tap
    /// order); returns the gradient with respect to the input pair.
    pub fn backward(&mut self, d_logits: &[T], d_taps: Option<&[Tensor<T>]>) -> Result<Tensor<T>> {
        let shape = self.head_shape.ok_or_else(missing_cache)?;
        if d_logits.len() != shape[0] {
            return Err(Error::Shape(format!("{} logit gradients for batch {}", d_logits.len(), shape[0])));
        }
        if let Some(t) = d_taps {
            if t.len() != self.spec.tap_layers.len() {
                return Err(Error::Shape(format!("{} tap gradients for {} taps", t.len(), self.spec.tap_layers.len())));
            }
        }
        let plane = shape[2] * shape[3];
        let inv = T::one() / T::from_usize_lossy(plane);
        let mut g = Tensor::zeros(shape);
        for (b, &d) in d_logits.iter().enumerate() {
            g.item_mut(b).iter_mut().for_each(|v| *v = d * inv);
        }
        for i in (0..self.layers.len()).rev() {
            if let (Some(taps), Some(k)) = (d_taps, self.spec.tap_layers.iter().position(|&t| t == i)) {
                accumulate(&mut g, &taps[k])?;
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }
}
