//! Weight and activation quantization.
//!
//! Weights are scaled by their mean absolute value `beta` and rounded into
//! either the ternary set {-1, 0, 1} or a signed b-bit range. Activations are
//! layer-normalized, scaled by `Q_p / gamma` with `gamma = max|x|` and
//! clipped strictly inside `(-Q_p, Q_p)`. Layer outputs are brought back to
//! the float domain with `y * gamma * beta / Q_p`.

use crate::error::{Error, Result};
use crate::tensor::{FloatTensor, IntQuantTensor, TernaryTensor};

pub const DEFAULT_EPSILON: f32 = 1e-5;
pub const DEFAULT_ACTIVATION_BITS: u8 = 8;
pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Weight precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightBits {
    /// 1.58-bit: values in {-1, 0, 1}.
    Ternary,
    /// Signed integer with the given bit width (2..=8).
    Int(u8),
}

impl WeightBits {
    /// Nominal bits per weight (`log2(3)` for ternary).
    pub fn nominal_bits(self) -> f64 {
        match self {
            WeightBits::Ternary => 3f64.log2(),
            WeightBits::Int(b) => b as f64,
        }
    }
}

impl std::fmt::Display for WeightBits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightBits::Ternary => f.write_str("1.58"),
            WeightBits::Int(b) => write!(f, "{b}"),
        }
    }
}

impl std::str::FromStr for WeightBits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1.58" | "ternary" => Ok(WeightBits::Ternary),
            other => {
                let b: u8 =
                    other.parse().map_err(|_| Error::InvalidConfig(format!("unknown weight precision {other:?}")))?;
                if !(2..=8).contains(&b) {
                    return Err(Error::InvalidConfig(format!("integer precision must be 2..=8, got {b}")));
                }
                Ok(WeightBits::Int(b))
            }
        }
    }
}

/// Tie-breaking rule for rounding to the nearest integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    HalfToEven,
}

impl Rounding {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Rounding::HalfAwayFromZero => v.round(),
            Rounding::HalfToEven => v.round_ties_even(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    pub weight_bits: WeightBits,
    /// Activation precision `p`; activations are scaled into `(-2^(p-1), 2^(p-1))`.
    pub activation_bits: u8,
    pub epsilon: f32,
    pub rounding: Rounding,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            weight_bits: WeightBits::Ternary,
            activation_bits: DEFAULT_ACTIVATION_BITS,
            epsilon: DEFAULT_EPSILON,
            rounding: Rounding::HalfAwayFromZero,
        }
    }
}

impl QuantConfig {
    pub fn ternary() -> Self {
        Self::default()
    }

    pub fn int(bits: u8) -> Self {
        Self { weight_bits: WeightBits::Int(bits), ..Self::default() }
    }

    pub fn with_epsilon(mut self, epsilon: f32) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.activation_bits) {
            return Err(Error::InvalidConfig(format!("activation bits must be 2..=16, got {}", self.activation_bits)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let WeightBits::Int(b) = self.weight_bits {
            if !(2..=8).contains(&b) {
                return Err(Error::InvalidConfig(format!("integer precision must be 2..=8, got {b}")));
            }
        }
        Ok(())
    }

    /// `Q_p = 2^(p-1)`.
    pub fn activation_range(&self) -> f32 {
        activation_range(self.activation_bits)
    }
}

pub fn activation_range(p: u8) -> f32 {
    (1u32 << (p - 1)) as f32
}

/// Mean absolute value of the weights.
///
/// Dense and convolutional weights share this definition: the mean runs over
/// every element regardless of layout. Accumulates in `f64`.
pub fn compute_beta(weights: &FloatTensor) -> Result<f32> {
    mean_abs(weights.data())
}

pub fn mean_abs(values: &[f32]) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let sum: f64 = values.iter().map(|v| v.abs() as f64).sum();
    Ok((sum / values.len() as f64) as f32)
}

fn quantize_values(data: &[f32], beta: f32, lo: f32, hi: f32, cfg: &QuantConfig) -> Vec<i8> {
    let denom = beta + cfg.epsilon;
    data.iter().map(|&w| cfg.rounding.apply((w / denom).clamp(lo, hi)) as i8).collect()
}

/// `Round(Clip(W / (beta + eps), -1, 1))`.
pub fn quantize_ternary(weights: &FloatTensor, cfg: &QuantConfig) -> Result<TernaryTensor> {
    cfg.validate()?;
    let beta = compute_beta(weights)?;
    let values = quantize_values(weights.data(), beta, -1.0, 1.0, cfg);
    TernaryTensor::new(weights.shape().to_vec(), values, beta)
}

/// `Round(Clip(W / (beta + eps), -q, q - 1))` with `q = 2^(b-1)`.
pub fn quantize_b_bit(weights: &FloatTensor, cfg: &QuantConfig) -> Result<IntQuantTensor> {
    cfg.validate()?;
    let bits = match cfg.weight_bits {
        WeightBits::Int(b) => b,
        WeightBits::Ternary => return Err(Error::InvalidConfig("ternary precision must use quantize_ternary".into())),
    };
    let q = (1i32 << (bits - 1)) as f32;
    let beta = compute_beta(weights)?;
    let values = quantize_values(weights.data(), beta, -q, q - 1.0, cfg);
    IntQuantTensor::new(weights.shape().to_vec(), values, bits, beta)
}

/// Either kind of quantized weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedWeights {
    Ternary(TernaryTensor),
    Int(IntQuantTensor),
}

impl QuantizedWeights {
    pub fn shape(&self) -> &[usize] {
        match self {
            QuantizedWeights::Ternary(t) => t.shape(),
            QuantizedWeights::Int(t) => t.shape(),
        }
    }

    pub fn values(&self) -> &[i8] {
        match self {
            QuantizedWeights::Ternary(t) => t.values(),
            QuantizedWeights::Int(t) => t.values(),
        }
    }

    pub fn beta(&self) -> f32 {
        match self {
            QuantizedWeights::Ternary(t) => t.beta(),
            QuantizedWeights::Int(t) => t.beta(),
        }
    }

    pub fn dequantize(&self) -> FloatTensor {
        match self {
            QuantizedWeights::Ternary(t) => t.dequantize(),
            QuantizedWeights::Int(t) => t.dequantize(),
        }
    }
}

/// Quantizes according to `cfg.weight_bits`.
pub fn quantize_weights(weights: &FloatTensor, cfg: &QuantConfig) -> Result<QuantizedWeights> {
    match cfg.weight_bits {
        WeightBits::Ternary => quantize_ternary(weights, cfg).map(QuantizedWeights::Ternary),
        WeightBits::Int(_) => quantize_b_bit(weights, cfg).map(QuantizedWeights::Int),
    }
}

/// Layer normalization over the last axis, without affine parameters.
pub fn layer_norm(x: &FloatTensor, eps: f32) -> FloatTensor {
    layer_norm_axis(x, x.shape().len() - 1, eps).expect("last axis is always valid")
}

/// Layer normalization over `axis`.
pub fn layer_norm_axis(x: &FloatTensor, axis: usize, eps: f32) -> Result<FloatTensor> {
    let (out, _) = layer_norm_with_stats(x.data(), x.shape(), axis, eps)?;
    Ok(FloatTensor::from_parts(x.shape().to_vec(), out))
}

/// Normalizes every lane along `axis` and returns the reciprocal standard
/// deviation of each lane, ordered by (outer, inner) position.
pub(crate) fn layer_norm_with_stats(
    data: &[f32],
    shape: &[usize],
    axis: usize,
    eps: f32,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if axis >= shape.len() {
        return Err(Error::InvalidShape(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0f32; data.len()];
    let mut rstds = Vec::with_capacity(outer * inner);
    let mut lane = vec![0.0f64; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (k, slot) in lane.iter_mut().enumerate() {
                *slot = data[base + k * inner] as f64;
            }
            let n = len as f64;
            let mean = lane.iter().sum::<f64>() / n;
            let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rstd = 1.0 / (var + eps as f64).sqrt();
            for (k, v) in lane.iter().enumerate() {
                out[base + k * inner] = ((v - mean) * rstd) as f32;
            }
            rstds.push(rstd as f32);
        }
    }
    Ok((out, rstds))
}

/// Scaled and clipped activations, with the scale `gamma` they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantActivation {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub gamma: f32,
    pub bits: u8,
}

impl QuantActivation {
    pub fn to_tensor(&self) -> FloatTensor {
        FloatTensor::from_parts(self.shape.clone(), self.values.clone())
    }
}

/// Largest magnitude an activation may take: `Q_p - eps`, kept strictly below `Q_p`.
pub fn activation_clip_limit(qp: f32, eps: f32) -> f32 {
    let limit = qp - eps;
    if limit >= qp {
        qp.next_down()
    } else {
        limit
    }
}

/// `Clip(x * Q_p / gamma, -Q_p + eps, Q_p - eps)` with `gamma = ||x||_inf`.
///
/// Values are clipped, not rounded. The divisor is `max(gamma, eps)` so an
/// all-zero input maps to zeros.
pub fn quantize_activation(x: &FloatTensor, cfg: &QuantConfig) -> Result<QuantActivation> {
    cfg.validate()?;
    let (values, gamma) = quantize_activation_values(x.data(), cfg);
    Ok(QuantActivation { shape: x.shape().to_vec(), values, gamma, bits: cfg.activation_bits })
}

pub(crate) fn quantize_activation_values(x: &[f32], cfg: &QuantConfig) -> (Vec<f32>, f32) {
    let gamma = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let qp = cfg.activation_range();
    let limit = activation_clip_limit(qp, cfg.epsilon);
    let denom = gamma.max(cfg.epsilon);
    let values = x.iter().map(|&v| (v * qp / denom).clamp(-limit, limit)).collect();
    (values, gamma)
}

/// `y = y_tilde * gamma * beta / Q_p`.
pub fn rescale_output(y_tilde: &FloatTensor, gamma: f32, beta: f32, p: u8) -> Result<FloatTensor> {
    if p < 2 {
        return Err(Error::InvalidConfig(format!("activation bits must be >= 2, got {p}")));
    }
    let mut data = y_tilde.data().to_vec();
    rescale_in_place(&mut data, gamma, beta, activation_range(p));
    Ok(FloatTensor::from_parts(y_tilde.shape().to_vec(), data))
}

pub(crate) fn rescale_in_place(data: &mut [f32], gamma: f32, beta: f32, qp: f32) {
    let factor = gamma * beta / qp;
    for v in data {
        *v *= factor;
    }
}
