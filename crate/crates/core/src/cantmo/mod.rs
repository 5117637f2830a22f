//! Two bias-free context-aggregation networks predicting the Laplacian
//! pyramid of the display image from the normalized pyramid of the scene.
//!
//! One network is shared by every bandpass level (and the highpass level),
//! the other handles the lowpass residual. The predicted pyramid is
//! collapsed to a plane `u`, and the display luminance is
//! `i_min + (i_max − i_min)·sigmoid(u)`.

mod weights;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradkern::{conv2d, ops, NormMode, Tape, Tensor, Var};
use crate::hdrimg::DisplayRange;
use crate::plane::Plane;
use crate::pyramid::{self, LaplacianPyramid, NormalizedPyramid, PyramidParams};

pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, LayerInfo, Manifest,
    ParamBreakdown, WEIGHTS_VERSION,
};

/// How `λ1`, `λ2` are shared inside one normalization layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    PerChannel,
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub widths: [usize; 4],
    pub dilations: [usize; 4],
    pub lrelu_slope: f64,
    pub momentum: f64,
    pub lambda_mode: LambdaMode,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            widths: [32, 32, 32, 1],
            dilations: [1, 2, 4, 1],
            lrelu_slope: 0.2,
            momentum: 0.1,
            lambda_mode: LambdaMode::PerChannel,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths[3] != 1 || self.widths.contains(&0) {
            return Err(Error::InvalidParam(format!(
                "layer widths {:?} must be positive and end in 1",
                self.widths
            )));
        }
        if self.dilations.contains(&0) {
            return Err(Error::InvalidParam("dilations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lrelu_slope) || !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidParam(
                "slope and momentum must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.widths[layer - 1]
        }
    }

    fn lambda_len(&self, layer: usize) -> usize {
        match self.lambda_mode {
            LambdaMode::PerChannel => self.widths[layer],
            LambdaMode::Scalar => 1,
        }
    }

    pub fn kernel_shape(&self, layer: usize) -> [usize; 4] {
        [self.widths[layer], self.in_channels(layer), 3, 3]
    }

    /// Learnable parameters of one network: `(conv, normalization)`.
    pub fn params_per_net(&self) -> (usize, usize) {
        let conv = (0..4)
            .map(|l| self.kernel_shape(l).iter().product::<usize>())
            .sum();
        let norm = (0..3).map(|l| 2 * self.lambda_len(l)).sum();
        (conv, norm)
    }
}

/// Weights and running statistics of one network. Layers 0–2 are followed
/// by normalization and LReLU; layer 3 is a bare convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub kernels: Vec<Tensor>,
    pub lambda1: Vec<Vec<f64>>,
    pub lambda2: Vec<Vec<f64>>,
    pub running_rms: Vec<Vec<f64>>,
}

impl NetWeights {
    fn init(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let kernels = (0..4)
            .map(|l| {
                let shape = arch.kernel_shape(l);
                let fan_in = (shape[1] * 9) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect())
                    .expect("shape product")
            })
            .collect();
        NetWeights {
            kernels,
            lambda1: (0..3).map(|l| vec![1.0; arch.lambda_len(l)]).collect(),
            lambda2: (0..3).map(|l| vec![0.0; arch.lambda_len(l)]).collect(),
            running_rms: (0..3).map(|l| vec![1.0; arch.widths[l]]).collect(),
        }
    }

    fn check(&self, arch: &ArchConfig) -> Result<()> {
        let ok = self.kernels.len() == 4
            && self.lambda1.len() == 3
            && self.lambda2.len() == 3
            && self.running_rms.len() == 3
            && (0..4).all(|l| self.kernels[l].shape() == arch.kernel_shape(l))
            && (0..3).all(|l| {
                self.lambda1[l].len() == arch.lambda_len(l)
                    && self.lambda2[l].len() == arch.lambda_len(l)
                    && self.running_rms[l].len() == arch.widths[l]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "network weights do not match the architecture".into(),
            ))
        }
    }

    /// Folds per-layer batch statistics into the running RMS.
    pub fn update_running(&mut self, sigmas: &[Vec<f64>], momentum: f64) {
        for (run, sg) in self.running_rms.iter_mut().zip(sigmas) {
            for (r, s) in run.iter_mut().zip(sg) {
                *r = (1.0 - momentum) * *r + momentum * s;
            }
        }
    }

    /// Forward pass without a tape. Returns the output plane and the
    /// per-layer `σ` that was applied.
    pub fn forward(
        &self,
        arch: &ArchConfig,
        y: &Plane,
        mode: Mode,
    ) -> Result<(Plane, Vec<Vec<f64>>)> {
        let mut x = Tensor::from_plane(y);
        let mut sigmas = Vec::with_capacity(3);
        for l in 0..4 {
            x = conv2d(&x, &self.kernels[l], arch.dilations[l])?;
            if l < 3 {
                let sigma = match mode {
                    Mode::Train => ops::channel_rms(&x),
                    Mode::Infer => self.running_rms[l].clone(),
                };
                x = ops::adaptive_norm(&x, &self.lambda1[l], &self.lambda2[l], &sigma)?;
                x = ops::lrelu(&x, arch.lrelu_slope);
                sigmas.push(sigma);
            }
        }
        Ok((x.to_plane()?, sigmas))
    }
}

/// Normalization statistics source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Per-pass RMS of each layer's activations.
    Train,
    /// Stored running RMS; every network is then linear in scale.
    Infer,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub seed: u64,
    pub epochs: usize,
    pub training: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanWeights {
    pub arch: ArchConfig,
    pub bandpass: NetWeights,
    pub lowpass: NetWeights,
    pub meta: WeightsMeta,
}

impl CanWeights {
    /// Fan-in scaled normal kernels (`std = √(2/fan_in)`), `λ1 = 1`, `λ2 = 0`.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bandpass = NetWeights::init(&arch, &mut rng);
        let lowpass = NetWeights::init(&arch, &mut rng);
        Ok(CanWeights {
            arch,
            bandpass,
            lowpass,
            meta: WeightsMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.bandpass.check(&self.arch)?;
        self.lowpass.check(&self.arch)
    }

    pub fn nets(&self) -> [&NetWeights; 2] {
        [&self.bandpass, &self.lowpass]
    }

    /// Learnable parameters in a fixed order: for each network, the four
    /// kernels, then `λ1` and `λ2` of layers 0–2.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for net in self.nets() {
            out.extend(net.kernels.iter().map(|k| k.data()));
            out.extend(net.lambda1.iter().map(|v| v.as_slice()));
            out.extend(net.lambda2.iter().map(|v| v.as_slice()));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for net in [&mut self.bandpass, &mut self.lowpass] {
            out.extend(net.kernels.iter_mut().map(|k| k.data_mut()));
            out.extend(net.lambda1.iter_mut().map(|v| v.as_mut_slice()));
            out.extend(net.lambda2.iter_mut().map(|v| v.as_mut_slice()));
        }
        out
    }
}

/// Exact learnable-parameter count.
pub fn param_count(w: &CanWeights) -> usize {
    w.params().iter().map(|p| p.len()).sum()
}

/// Runs the shared network on every bandpass plane.
pub fn forward_bandpass(levels: &[Plane], w: &CanWeights, mode: Mode) -> Result<Vec<Plane>> {
    if levels.is_empty() {
        return Err(Error::Shape("no bandpass levels".into()));
    }
    levels
        .iter()
        .map(|y| w.bandpass.forward(&w.arch, y, mode).map(|r| r.0))
        .collect()
}

pub fn forward_lowpass(y: &Plane, w: &CanWeights, mode: Mode) -> Result<Plane> {
    Ok(w.lowpass.forward(&w.arch, y, mode)?.0)
}

/// Runs both networks over a normalized pyramid.
pub fn predict(norm: &NormalizedPyramid, w: &CanWeights, mode: Mode) -> Result<LaplacianPyramid> {
    let bandpass = if norm.bandpass().is_empty() {
        Vec::new()
    } else {
        forward_bandpass(norm.bandpass(), w, mode)?
    };
    Ok(LaplacianPyramid {
        bandpass,
        lowpass: forward_lowpass(norm.lowpass(), w, mode)?,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub decompose_s: f64,
    pub forward_s: f64,
    pub collapse_s: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.decompose_s + self.forward_s + self.collapse_s
    }
}

#[derive(Clone, Debug)]
pub struct TmoOutput {
    pub pyramid: LaplacianPyramid,
    pub image: Plane,
    pub timing: Timing,
}

fn to_display(u: &Plane, display: &DisplayRange) -> Plane {
    let span = display.span();
    u.map(|v| display.i_min + span * ops::sigmoid(v))
}

/// Tone-maps calibrated luminance with inference statistics.
pub fn tonemap(
    lum: &Plane,
    w: &CanWeights,
    params: &PyramidParams,
    display: &DisplayRange,
) -> Result<TmoOutput> {
    tonemap_with_mode(lum, w, params, display, Mode::Infer)
}

pub fn tonemap_with_mode(
    lum: &Plane,
    w: &CanWeights,
    params: &PyramidParams,
    display: &DisplayRange,
    mode: Mode,
) -> Result<TmoOutput> {
    w.validate()?;
    let t0 = Instant::now();
    let norm = pyramid::analyze(lum, params)?;
    let t1 = Instant::now();
    let pyr = predict(&norm, w, mode)?;
    let t2 = Instant::now();
    let u = pyramid::collapse_laplacian(&pyr, &params.lowpass_taps)?;
    let image = to_display(&u, display);
    let t3 = Instant::now();
    Ok(TmoOutput {
        pyramid: pyr,
        image,
        timing: Timing {
            decompose_s: (t1 - t0).as_secs_f64(),
            forward_s: (t2 - t1).as_secs_f64(),
            collapse_s: (t3 - t2).as_secs_f64(),
        },
    })
}

/// Tape handles for one network's learnable tensors.
#[derive(Clone, Debug)]
pub struct NetVars {
    kernels: Vec<Var>,
    lambda1: Vec<Var>,
    lambda2: Vec<Var>,
}

/// Tape handles for both networks, in [`CanWeights::params`] order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    nets: [NetVars; 2],
}

impl ParamVars {
    pub fn register(tape: &mut Tape, w: &CanWeights) -> Self {
        let reg = |tape: &mut Tape, net: &NetWeights| {
            let vec_leaf = |tape: &mut Tape, v: &Vec<f64>| {
                tape.leaf(
                    Tensor::new([1, v.len(), 1, 1], v.clone()).expect("len"),
                    true,
                )
            };
            NetVars {
                kernels: net
                    .kernels
                    .iter()
                    .map(|k| tape.leaf(k.clone(), true))
                    .collect(),
                lambda1: net.lambda1.iter().map(|v| vec_leaf(tape, v)).collect(),
                lambda2: net.lambda2.iter().map(|v| vec_leaf(tape, v)).collect(),
            }
        };
        ParamVars {
            nets: [reg(tape, &w.bandpass), reg(tape, &w.lowpass)],
        }
    }

    /// Accumulated gradients in [`CanWeights::params`] order.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for net in &self.nets {
            for v in net.kernels.iter().chain(&net.lambda1).chain(&net.lambda2) {
                out.push(tape.grad(*v).into_data());
            }
        }
        out
    }
}

fn forward_tape(
    tape: &mut Tape,
    arch: &ArchConfig,
    vars: &NetVars,
    net: &NetWeights,
    y: &Plane,
    mode: Mode,
) -> Result<(Var, Vec<Vec<f64>>)> {
    let mut x = tape.constant(Tensor::from_plane(y));
    let mut sigmas = Vec::with_capacity(3);
    for l in 0..4 {
        x = tape.conv2d(x, vars.kernels[l], arch.dilations[l])?;
        if l < 3 {
            let nm = match mode {
                Mode::Train => NormMode::Train,
                Mode::Infer => NormMode::Infer(net.running_rms[l].clone()),
            };
            let (y, sigma) = tape.adaptive_norm(x, vars.lambda1[l], vars.lambda2[l], nm)?;
            x = tape.lrelu(y, arch.lrelu_slope)?;
            sigmas.push(sigma);
        }
    }
    Ok((x, sigmas))
}

/// Recorded tone-mapping pass.
pub struct TapedOutput {
    /// Display luminance as a `(1, 1, h, w)` node.
    pub image: Var,
    /// Per-level layer statistics of the bandpass network, finest first.
    pub bandpass_sigmas: Vec<Vec<Vec<f64>>>,
    pub lowpass_sigmas: Vec<Vec<f64>>,
}

/// Records the full pipeline on `tape` so that gradients of any function of
/// the display image can flow back to the weights.
pub fn tonemap_taped(
    tape: &mut Tape,
    vars: &ParamVars,
    lum: &Plane,
    w: &CanWeights,
    params: &PyramidParams,
    display: &DisplayRange,
    mode: Mode,
) -> Result<TapedOutput> {
    w.validate()?;
    let norm = pyramid::analyze(lum, params)?;
    let mut bandpass_sigmas = Vec::new();
    let mut predicted = Vec::new();
    for y in norm.bandpass() {
        let (v, s) = forward_tape(tape, &w.arch, &vars.nets[0], &w.bandpass, y, mode)?;
        predicted.push(v);
        bandpass_sigmas.push(s);
    }
    let (mut acc, lowpass_sigmas) = forward_tape(
        tape,
        &w.arch,
        &vars.nets[1],
        &w.lowpass,
        norm.lowpass(),
        mode,
    )?;
    for (z, y) in predicted.iter().zip(norm.bandpass()).rev() {
        let up = tape.upsample(acc, &params.lowpass_taps, y.width(), y.height())?;
        acc = tape.add(*z, up)?;
    }
    let s = tape.sigmoid(acc);
    let image = tape.affine(s, display.span(), display.i_min);
    Ok(TapedOutput {
        image,
        bandpass_sigmas,
        lowpass_sigmas,
    })
}

#[cfg(test)]
mod tests;
