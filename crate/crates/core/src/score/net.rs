//! Small convolutional score network: 3x3 zero-padded convolutions with
//! ReLU between layers. The raw output is divided by the noise level, so
//! `s(x, σ) = net(x) / σ`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, param_err, HkgmError, Result};
use crate::volume::ChannelField;

pub const KERNEL: usize = 3;

/// Shape of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

/// How the noise level enters the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Conditioning {
    /// `s(x, σ) = net(x) / σ`
    #[default]
    Output,
    /// `s(x, σ) = net(x / σ) / σ`: the network always sees unit-variance
    /// noise, so one set of weights serves every noise level.
    InputOutput,
}

impl Conditioning {
    pub fn code(self) -> u32 {
        match self {
            Conditioning::Output => 0,
            Conditioning::InputOutput => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Conditioning::Output),
            1 => Some(Conditioning::InputOutput),
            _ => None,
        }
    }
}

/// Ordered layer list; ReLU follows every layer but the last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<LayerShape>,
    pub conditioning: Conditioning,
}

impl Architecture {
    /// `2 -> 32 -> 32 -> 2`
    pub fn reference() -> Self {
        Self::with_width(32)
    }

    pub fn with_width(hidden: usize) -> Self {
        let l = |i, o| LayerShape {
            in_channels: i,
            out_channels: o,
            kernel: KERNEL,
        };
        Architecture {
            layers: vec![l(2, hidden), l(hidden, hidden), l(hidden, 2)],
            conditioning: Conditioning::Output,
        }
    }

    pub fn with_conditioning(mut self, conditioning: Conditioning) -> Self {
        self.conditioning = conditioning;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return param_err("architecture has no layers");
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel != KERNEL || l.in_channels == 0 || l.out_channels == 0 {
                return param_err(format!("unsupported layer {i}: {l:?}"));
            }
            if i > 0 && self.layers[i - 1].out_channels != l.in_channels {
                return param_err(format!(
                    "layer {i} expects {} channels, previous emits {}",
                    l.in_channels,
                    self.layers[i - 1].out_channels
                ));
            }
        }
        if self.input_channels() != self.output_channels() {
            return param_err("score network must map a field onto the same channel count");
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn output_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels)
            .sum()
    }
}

/// Zero-padded 3x3 convolution, weights `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub shape: LayerShape,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

fn pad(input: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; channels * ph * pw];
    for c in 0..channels {
        for y in 0..h {
            let dst = (c * ph + y + 1) * pw + 1;
            out[dst..dst + w].copy_from_slice(&input[(c * h + y) * w..(c * h + y + 1) * w]);
        }
    }
    out
}

/// Gradients of one layer.
pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub input: Vec<f32>,
}

impl Conv3x3 {
    pub fn zeros(shape: LayerShape) -> Self {
        Conv3x3 {
            shape,
            weight: vec![0.0; shape.out_channels * shape.in_channels * KERNEL * KERNEL],
            bias: vec![0.0; shape.out_channels],
        }
    }

    fn he_normal(shape: LayerShape, gain: f64, rng: &mut impl Rng) -> Self {
        let std = gain * (2.0 / (shape.in_channels * KERNEL * KERNEL) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut layer = Self::zeros(shape);
        for w in layer.weight.iter_mut() {
            *w = normal.sample(rng) as f32;
        }
        layer
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((o * self.shape.in_channels + i) * KERNEL + ky) * KERNEL + kx]
    }

    /// Input `[in][h][w]` to output `[out][h][w]`.
    pub fn forward(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        let (cin, cout) = (self.shape.in_channels, self.shape.out_channels);
        debug_assert_eq!(input.len(), cin * h * w);
        let padded = pad(input, cin, h, w);
        let pw = w + 2;
        let mut out = vec![0.0f32; cout * h * w];
        for o in 0..cout {
            let plane = &mut out[o * h * w..(o + 1) * h * w];
            plane.fill(self.bias[o]);
            for i in 0..cin {
                let src = &padded[i * (h + 2) * pw..(i + 1) * (h + 2) * pw];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = self.w(o, i, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                            for (d, s) in plane[y * w..(y + 1) * w].iter_mut().zip(row) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Gradients with respect to weights, bias and input given the upstream
    /// gradient `grad_out` (`[out][h][w]`).
    pub fn backward(&self, input: &[f32], grad_out: &[f32], h: usize, w: usize) -> ConvGrad {
        let (cin, cout) = (self.shape.in_channels, self.shape.out_channels);
        let padded = pad(input, cin, h, w);
        let pw = w + 2;
        let plane_p = (h + 2) * pw;
        let mut gw = vec![0.0f32; self.weight.len()];
        let mut gb = vec![0.0f32; cout];
        let mut gpad = vec![0.0f32; cin * plane_p];
        for o in 0..cout {
            let go = &grad_out[o * h * w..(o + 1) * h * w];
            gb[o] = go.iter().sum();
            for i in 0..cin {
                let src = &padded[i * plane_p..(i + 1) * plane_p];
                let gsrc = &mut gpad[i * plane_p..(i + 1) * plane_p];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = self.w(o, i, ky, kx);
                        let mut acc = 0.0f32;
                        for y in 0..h {
                            let off = (y + ky) * pw + kx;
                            let g = &go[y * w..(y + 1) * w];
                            for (s, gg) in src[off..off + w].iter().zip(g) {
                                acc += s * gg;
                            }
                            if wv != 0.0 {
                                for (d, gg) in gsrc[off..off + w].iter_mut().zip(g) {
                                    *d += wv * gg;
                                }
                            }
                        }
                        gw[((o * cin + i) * KERNEL + ky) * KERNEL + kx] = acc;
                    }
                }
            }
        }
        let mut gin = vec![0.0f32; cin * h * w];
        for i in 0..cin {
            for y in 0..h {
                let from = i * plane_p + (y + 1) * pw + 1;
                gin[(i * h + y) * w..(i * h + y + 1) * w].copy_from_slice(&gpad[from..from + w]);
            }
        }
        ConvGrad {
            weight: gw,
            bias: gb,
            input: gin,
        }
    }
}

/// Anything that estimates `∇ log p_σ(x)` for a packed field.
pub trait ScoreFn: Sync {
    fn score(&self, x: &ChannelField, sigma: f64) -> Result<ChannelField>;
}

/// Adapter for closures.
pub struct FnScore<F>(pub F);

impl<F> ScoreFn for FnScore<F>
where
    F: Fn(&ChannelField, f64) -> ChannelField + Sync,
{
    fn score(&self, x: &ChannelField, sigma: f64) -> Result<ChannelField> {
        Ok((self.0)(x, sigma))
    }
}

/// `s ≡ 0`
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroScore;

impl ScoreFn for ZeroScore {
    fn score(&self, x: &ChannelField, _sigma: f64) -> Result<ChannelField> {
        Ok(ChannelField::zeros(x.channels(), x.nx(), x.ny()))
    }
}

/// Exact score of the isotropic Gaussian `N(mean, var)` perturbed with
/// noise `σ`: `-(x - mean) / (var + σ²)`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianScore {
    pub mean: f64,
    pub var: f64,
}

impl ScoreFn for GaussianScore {
    fn score(&self, x: &ChannelField, sigma: f64) -> Result<ChannelField> {
        let denom = self.var + sigma * sigma;
        let data = x
            .as_slice()
            .iter()
            .map(|v| -(v - self.mean) / denom)
            .collect();
        ChannelField::new(x.channels(), x.nx(), x.ny(), data)
    }
}

/// Summary of how a model was trained. Not persisted in checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Loss of the freshly initialized model over the training set.
    pub initial_loss: f64,
    /// Mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Exponentially smoothed `epoch_losses`.
    pub smoothed_losses: Vec<f64>,
}

/// Noise range a model was trained for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub levels: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel {
    pub architecture: Architecture,
    pub layers: Vec<Conv3x3>,
    pub schedule: ScheduleParams,
    pub meta: TrainingMeta,
}

/// Intermediate values of one forward pass.
pub(crate) struct Activations {
    /// Input of every layer (post-ReLU for hidden layers).
    pub inputs: Vec<Vec<f32>>,
    /// Pre-activation of every hidden layer.
    pub pre: Vec<Vec<f32>>,
    pub output: Vec<f32>,
}

impl ScoreModel {
    pub fn zeros(architecture: Architecture, schedule: ScheduleParams) -> Result<Self> {
        architecture.validate()?;
        let layers = architecture
            .layers
            .iter()
            .map(|&s| Conv3x3::zeros(s))
            .collect();
        Ok(ScoreModel {
            architecture,
            layers,
            schedule,
            meta: TrainingMeta::default(),
        })
    }

    /// He-normal initialization; the last layer is scaled down so the
    /// initial network output is small.
    pub fn init(
        architecture: Architecture,
        schedule: ScheduleParams,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        architecture.validate()?;
        let last = architecture.layers.len() - 1;
        let layers = architecture
            .layers
            .iter()
            .enumerate()
            .map(|(i, &s)| Conv3x3::he_normal(s, if i == last { 0.1 } else { 1.0 }, rng))
            .collect();
        Ok(ScoreModel {
            architecture,
            layers,
            schedule,
            meta: TrainingMeta::default(),
        })
    }

    pub(crate) fn forward_cached(&self, input: &[f32], h: usize, w: usize) -> Activations {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&current, h, w);
            inputs.push(current);
            if i + 1 == self.layers.len() {
                return Activations {
                    inputs,
                    pre,
                    output: z,
                };
            }
            current = z.iter().map(|&v| v.max(0.0)).collect();
            pre.push(z);
        }
        unreachable!("architecture has at least one layer")
    }

    /// `σ s(x, σ)`: the network output before division by σ.
    pub fn network(&self, x: &ChannelField, sigma: f64) -> Result<ChannelField> {
        if x.channels() != self.architecture.input_channels() {
            return dim_err(format!(
                "model expects {} channels, got {}",
                self.architecture.input_channels(),
                x.channels()
            ));
        }
        let act = self.forward_cached(&self.input_for(x, sigma), x.nx(), x.ny());
        ChannelField::new(
            self.architecture.output_channels(),
            x.nx(),
            x.ny(),
            act.output.into_iter().map(f64::from).collect(),
        )
    }

    /// Network input for `x` at noise level `sigma`.
    pub(crate) fn input_for(&self, x: &ChannelField, sigma: f64) -> Vec<f32> {
        let scale = match self.architecture.conditioning {
            Conditioning::Output => 1.0,
            Conditioning::InputOutput => 1.0 / sigma,
        };
        x.as_slice().iter().map(|&v| (v * scale) as f32).collect()
    }

    /// Hidden activation feeding the last layer when scoring `x` at `sigma`.
    pub fn penultimate(&self, x: &ChannelField, sigma: f64) -> Result<Vec<f32>> {
        let mut act = self.forward_cached(&self.input_for(x, sigma), x.nx(), x.ny());
        Ok(act.inputs.pop().expect("at least one layer"))
    }

    pub fn parameter_count(&self) -> usize {
        self.architecture.parameter_count()
    }

    /// All parameters in checkpoint order (per layer: weights, then bias).
    pub fn parameters(&self) -> impl Iterator<Item = &f32> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }
}

impl ScoreFn for ScoreModel {
    fn score(&self, x: &ChannelField, sigma: f64) -> Result<ChannelField> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(HkgmError::Parameter(format!(
                "noise level must be positive, got {sigma}"
            )));
        }
        let (lo, hi) = (self.schedule.sigma_min, self.schedule.sigma_max);
        if sigma < lo * (1.0 - 1e-9) || sigma > hi * (1.0 + 1e-9) {
            log::warn!("score evaluated at σ = {sigma}, outside the trained range [{lo}, {hi}]");
        }
        let mut out = self.network(x, sigma)?;
        for v in out.as_mut_slice() {
            *v /= sigma;
        }
        Ok(out)
    }
}
