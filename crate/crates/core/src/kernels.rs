//! Quantized forward passes for bias-free linear and 1-D convolution layers.
//!
//! Every forward runs the same four stages: layer normalization over the
//! feature axis, activation scaling by `Q_p / gamma`, accumulation against
//! the integer weights, and rescaling by `gamma * beta / Q_p`. Ternary
//! weights accumulate with add/subtract/skip instead of multiplies.

use crate::codec::{decode, PackedWeights};
use crate::error::{Error, Result};
use crate::quant::{layer_norm_with_stats, quantize_activation_values, rescale_in_place, QuantConfig, LAYER_NORM_EPS};
use crate::tensor::{FloatTensor, IntQuantTensor, TernaryTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self { in_features, out_features }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_features, self.in_features]
    }
}

/// Weight layout is `(c_out, c_in, kernel_size)`; input is `(c_in, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dSpec {
    pub fn new(c_in: usize, c_out: usize, kernel_size: usize) -> Self {
        Self { c_in, c_out, kernel_size, stride: 1, padding: 0 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.kernel_size]
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }

    /// `floor((T + 2 * padding - K) / stride) + 1`.
    pub fn output_len(&self, t: usize) -> Result<usize> {
        self.validate()?;
        let padded = t + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::ShapeMismatch(format!(
                "input length {t} with padding {} is shorter than kernel {}",
                self.padding, self.kernel_size
            )));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }
}

/// A weight that can be multiply-accumulated into an `f32` sum.
pub(crate) trait Tap: Copy {
    fn mac(self, acc: f32, x: f32) -> f32;
}

/// Ternary weight; never multiplies.
#[derive(Clone, Copy)]
pub(crate) struct Trit(pub i8);

impl Tap for Trit {
    #[inline]
    fn mac(self, acc: f32, x: f32) -> f32 {
        match self.0 {
            1 => acc + x,
            -1 => acc - x,
            _ => acc,
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) struct IntTap(pub i8);

impl Tap for IntTap {
    #[inline]
    fn mac(self, acc: f32, x: f32) -> f32 {
        acc + self.0 as f32 * x
    }
}

impl Tap for f32 {
    #[inline]
    fn mac(self, acc: f32, x: f32) -> f32 {
        acc + self * x
    }
}

/// Normalized and activation-quantized input of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct PreparedInput {
    pub normalized: Vec<f32>,
    pub rstd: Vec<f32>,
    pub quantized: Vec<f32>,
    pub gamma: f32,
}

pub(crate) fn prepare_input(x: &FloatTensor, axis: usize, cfg: &QuantConfig) -> Result<PreparedInput> {
    cfg.validate()?;
    let (normalized, rstd) = layer_norm_with_stats(x.data(), x.shape(), axis, LAYER_NORM_EPS)?;
    let (quantized, gamma) = quantize_activation_values(&normalized, cfg);
    Ok(PreparedInput { normalized, rstd, quantized, gamma })
}

pub(crate) fn conv1d_accumulate<W: Tap>(
    weights: &[W],
    xq: &[f32],
    spec: &Conv1dSpec,
    t: usize,
    t_out: usize,
) -> Vec<f32> {
    let k = spec.kernel_size;
    let mut out = vec![0.0f32; spec.c_out * t_out];
    for o in 0..spec.c_out {
        for to in 0..t_out {
            let start = (to * spec.stride) as isize - spec.padding as isize;
            let mut acc = 0.0f32;
            for i in 0..spec.c_in {
                let wrow = &weights[(o * spec.c_in + i) * k..(o * spec.c_in + i + 1) * k];
                let xrow = &xq[i * t..(i + 1) * t];
                for (kk, &w) in wrow.iter().enumerate() {
                    let pos = start + kk as isize;
                    // Padded positions hold an exact zero after quantization.
                    if pos >= 0 && (pos as usize) < t {
                        acc = w.mac(acc, xrow[pos as usize]);
                    }
                }
            }
            out[o * t_out + to] = acc;
        }
    }
    out
}

pub(crate) fn linear_accumulate<W: Tap>(weights: &[W], xq: &[f32], spec: &LinearSpec, rows: usize) -> Vec<f32> {
    let (n_in, n_out) = (spec.in_features, spec.out_features);
    let mut out = vec![0.0f32; rows * n_out];
    for r in 0..rows {
        let xrow = &xq[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let wrow = &weights[o * n_in..(o + 1) * n_in];
            out[r * n_out + o] = wrow.iter().zip(xrow).fold(0.0f32, |acc, (&w, &x)| w.mac(acc, x));
        }
    }
    out
}

pub(crate) fn conv_input_len(x: &FloatTensor, spec: &Conv1dSpec) -> Result<usize> {
    spec.validate()?;
    match x.shape() {
        [c, t] if *c == spec.c_in => Ok(*t),
        other => Err(Error::ShapeMismatch(format!("conv input must be [{}, T], got {other:?}", spec.c_in))),
    }
}

pub(crate) fn linear_rows(x: &FloatTensor, spec: &LinearSpec) -> Result<usize> {
    let last = *x.shape().last().unwrap();
    if last != spec.in_features {
        return Err(Error::ShapeMismatch(format!("linear input last dim {last} != in_features {}", spec.in_features)));
    }
    Ok(x.len() / last)
}

fn check_weight_shape(actual: &[usize], expected: &[usize]) -> Result<()> {
    if actual != expected {
        return Err(Error::ShapeMismatch(format!("weight shape {actual:?}, expected {expected:?}")));
    }
    Ok(())
}

pub(crate) fn conv1d_pipeline<W: Tap>(
    x: &FloatTensor,
    spec: &Conv1dSpec,
    weights: &[W],
    beta: f32,
    cfg: &QuantConfig,
) -> Result<FloatTensor> {
    let t = conv_input_len(x, spec)?;
    let t_out = spec.output_len(t)?;
    let prepared = prepare_input(x, 0, cfg)?;
    let mut y = conv1d_accumulate(weights, &prepared.quantized, spec, t, t_out);
    rescale_in_place(&mut y, prepared.gamma, beta, cfg.activation_range());
    Ok(FloatTensor::from_parts(vec![spec.c_out, t_out], y))
}

pub(crate) fn linear_pipeline<W: Tap>(
    x: &FloatTensor,
    spec: &LinearSpec,
    weights: &[W],
    beta: f32,
    cfg: &QuantConfig,
) -> Result<FloatTensor> {
    let rows = linear_rows(x, spec)?;
    let prepared = prepare_input(x, x.shape().len() - 1, cfg)?;
    let mut y = linear_accumulate(weights, &prepared.quantized, spec, rows);
    rescale_in_place(&mut y, prepared.gamma, beta, cfg.activation_range());
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = spec.out_features;
    Ok(FloatTensor::from_parts(shape, y))
}

fn linear_spec_of(shape: &[usize]) -> Result<LinearSpec> {
    match shape {
        [o, i] => Ok(LinearSpec::new(*i, *o)),
        other => Err(Error::ShapeMismatch(format!("linear weight must be [out, in], got {other:?}"))),
    }
}

fn trits(values: &[i8]) -> Vec<Trit> {
    values.iter().map(|&v| Trit(v)).collect()
}

/// `y = (W~ . x~) * gamma * beta / Q_p` for `x` of shape `[..., in_features]`.
pub fn ternary_linear_forward(x: &FloatTensor, w: &TernaryTensor, cfg: &QuantConfig) -> Result<FloatTensor> {
    let spec = linear_spec_of(w.shape())?;
    linear_pipeline(x, &spec, &trits(w.values()), w.beta(), cfg)
}

/// Cross-correlation of `x: [c_in, T]` with ternary weights, then rescale.
pub fn ternary_conv1d_forward(
    x: &FloatTensor,
    spec: &Conv1dSpec,
    w: &TernaryTensor,
    cfg: &QuantConfig,
) -> Result<FloatTensor> {
    check_weight_shape(w.shape(), &spec.weight_shape())?;
    conv1d_pipeline(x, spec, &trits(w.values()), w.beta(), cfg)
}

/// Decodes the index stream and runs the ternary convolution; a bad index fails before any compute.
pub fn packed_forward(
    x: &FloatTensor,
    spec: &Conv1dSpec,
    packed: &PackedWeights,
    beta: f32,
    cfg: &QuantConfig,
) -> Result<FloatTensor> {
    let w = decode(packed, beta)?;
    ternary_conv1d_forward(x, spec, &w, cfg)
}

pub fn packed_linear_forward(
    x: &FloatTensor,
    packed: &PackedWeights,
    beta: f32,
    cfg: &QuantConfig,
) -> Result<FloatTensor> {
    let w = decode(packed, beta)?;
    ternary_linear_forward(x, &w, cfg)
}

pub fn int_linear_forward(x: &FloatTensor, w: &IntQuantTensor, cfg: &QuantConfig) -> Result<FloatTensor> {
    let spec = linear_spec_of(w.shape())?;
    let taps: Vec<IntTap> = w.values().iter().map(|&v| IntTap(v)).collect();
    linear_pipeline(x, &spec, &taps, w.beta(), cfg)
}

pub fn int_conv1d_forward(
    x: &FloatTensor,
    spec: &Conv1dSpec,
    w: &IntQuantTensor,
    cfg: &QuantConfig,
) -> Result<FloatTensor> {
    check_weight_shape(w.shape(), &spec.weight_shape())?;
    let taps: Vec<IntTap> = w.values().iter().map(|&v| IntTap(v)).collect();
    conv1d_pipeline(x, spec, &taps, w.beta(), cfg)
}

/// Same pipeline with unquantized weights and unit scale.
pub fn float_linear_forward(x: &FloatTensor, w: &FloatTensor, cfg: &QuantConfig) -> Result<FloatTensor> {
    let spec = linear_spec_of(w.shape())?;
    linear_pipeline(x, &spec, w.data(), 1.0, cfg)
}

pub fn float_conv1d_forward(
    x: &FloatTensor,
    spec: &Conv1dSpec,
    w: &FloatTensor,
    cfg: &QuantConfig,
) -> Result<FloatTensor> {
    check_weight_shape(w.shape(), &spec.weight_shape())?;
    conv1d_pipeline(x, spec, w.data(), 1.0, cfg)
}
