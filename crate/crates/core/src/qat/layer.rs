use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{
    conv1d_accumulate, conv_input_len, linear_accumulate, linear_rows, prepare_input, Conv1dSpec, IntTap, LinearSpec,
    PreparedInput, Trit,
};
use crate::quant::{quantize_weights, rescale_in_place, QuantConfig, QuantizedWeights};
use crate::tensor::FloatTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Linear(LinearSpec),
    Conv1d(Conv1dSpec),
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerSpec::Linear(s) => s.weight_shape(),
            LayerSpec::Conv1d(s) => s.weight_shape(),
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            LayerSpec::Linear(s) => s.in_features,
            LayerSpec::Conv1d(s) => s.c_in * s.kernel_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    /// Weights quantized per `cfg.weight_bits` in every forward.
    Quantized,
    /// Weights used as-is with unit scale; the activation path is unchanged.
    FloatPassthrough,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input_shape: Vec<usize>,
    prepared: PreparedInput,
    /// Weights the forward effectively applied: `W~ * beta`, or `W` in passthrough mode.
    effective: Vec<f32>,
    rows_or_len: usize,
    out_len: usize,
}

/// Trainable bias-free layer with quantize-dequantize forward.
#[derive(Debug, Clone)]
pub struct FakeQuantLayer {
    pub spec: LayerSpec,
    pub cfg: QuantConfig,
    pub mode: LayerMode,
    weights: FloatTensor,
    grad: Vec<f32>,
    cache: Option<ForwardCache>,
}

impl FakeQuantLayer {
    pub fn new(spec: LayerSpec, cfg: QuantConfig, mode: LayerMode, weights: FloatTensor) -> Result<Self> {
        if weights.shape() != spec.weight_shape() {
            return Err(Error::ShapeMismatch(format!(
                "weights {:?} do not match layer {:?}",
                weights.shape(),
                spec.weight_shape()
            )));
        }
        if let LayerSpec::Conv1d(c) = &spec {
            c.validate()?;
        }
        cfg.validate()?;
        let n = weights.len();
        Ok(Self { spec, cfg, mode, weights, grad: vec![0.0; n], cache: None })
    }

    /// Uniform initialization in `[-k, k]`, `k = 1 / sqrt(fan_in)`.
    pub fn init<R: Rng>(spec: LayerSpec, cfg: QuantConfig, mode: LayerMode, rng: &mut R) -> Result<Self> {
        let shape = spec.weight_shape();
        let k = 1.0 / (spec.fan_in() as f32).sqrt();
        let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-k..=k)).collect();
        Self::new(spec, cfg, mode, FloatTensor::new(shape, data)?)
    }

    pub fn weights(&self) -> &FloatTensor {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: FloatTensor) -> Result<()> {
        if weights.shape() != self.weights.shape() {
            return Err(Error::ShapeMismatch(format!(
                "weights {:?} do not match {:?}",
                weights.shape(),
                self.weights.shape()
            )));
        }
        self.weights = weights;
        self.cache = None;
        Ok(())
    }

    pub fn grad(&self) -> &[f32] {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Current weights in stored form.
    pub fn quantized(&self) -> Result<Option<QuantizedWeights>> {
        match self.mode {
            LayerMode::Quantized => quantize_weights(&self.weights, &self.cfg).map(Some),
            LayerMode::FloatPassthrough => Ok(None),
        }
    }

    /// Applies `w -= lr * update` elementwise.
    pub(crate) fn apply_update(&mut self, update: &[f32], lr: f32) {
        let mut data = self.weights.data().to_vec();
        for (w, u) in data.iter_mut().zip(update) {
            *w -= lr * u;
        }
        self.weights = FloatTensor::from_parts(self.spec.weight_shape(), data);
        self.cache = None;
    }

    /// Forward pass that caches what the backward pass needs.
    pub fn forward(&mut self, x: &FloatTensor) -> Result<FloatTensor> {
        let quantized = self.quantized()?;
        let (beta, effective) = match &quantized {
            Some(q) => (q.beta(), q.dequantize().into_data()),
            None => (1.0, self.weights.data().to_vec()),
        };
        let qp = self.cfg.activation_range();
        let (out, prepared, rows_or_len, out_len, shape) = match &self.spec {
            LayerSpec::Conv1d(spec) => {
                let t = conv_input_len(x, spec)?;
                let t_out = spec.output_len(t)?;
                let prepared = prepare_input(x, 0, &self.cfg)?;
                let xq = &prepared.quantized;
                let mut y = match &quantized {
                    Some(QuantizedWeights::Ternary(w)) => conv1d_accumulate(&trits(w.values()), xq, spec, t, t_out),
                    Some(QuantizedWeights::Int(w)) => conv1d_accumulate(&ints(w.values()), xq, spec, t, t_out),
                    None => conv1d_accumulate(self.weights.data(), xq, spec, t, t_out),
                };
                rescale_in_place(&mut y, prepared.gamma, beta, qp);
                (y, prepared, t, t_out, vec![spec.c_out, t_out])
            }
            LayerSpec::Linear(spec) => {
                let rows = linear_rows(x, spec)?;
                let prepared = prepare_input(x, x.shape().len() - 1, &self.cfg)?;
                let xq = &prepared.quantized;
                let mut y = match &quantized {
                    Some(QuantizedWeights::Ternary(w)) => linear_accumulate(&trits(w.values()), xq, spec, rows),
                    Some(QuantizedWeights::Int(w)) => linear_accumulate(&ints(w.values()), xq, spec, rows),
                    None => linear_accumulate(self.weights.data(), xq, spec, rows),
                };
                rescale_in_place(&mut y, prepared.gamma, beta, qp);
                let mut shape = x.shape().to_vec();
                *shape.last_mut().unwrap() = spec.out_features;
                (y, prepared, rows, spec.out_features, shape)
            }
        };
        self.cache = Some(ForwardCache { input_shape: x.shape().to_vec(), prepared, effective, rows_or_len, out_len });
        Ok(FloatTensor::from_parts(shape, out))
    }

    /// Accumulates the weight gradient and returns the input gradient.
    ///
    /// The weight gradient is the gradient with respect to the effective
    /// (dequantized) weights, passed through unchanged.
    pub fn backward(&mut self, grad_out: &FloatTensor) -> Result<FloatTensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let qp = self.cfg.activation_range();
        let gamma = cache.prepared.gamma;
        let out_scale = gamma / qp;
        let in_scale = qp / gamma.max(self.cfg.epsilon);
        let xq = &cache.prepared.quantized;
        let w = &cache.effective;
        let g = grad_out.data();
        let mut d_xq = vec![0.0f32; xq.len()];

        match &self.spec {
            LayerSpec::Conv1d(spec) => {
                let (t, t_out, k) = (cache.rows_or_len, cache.out_len, spec.kernel_size);
                if g.len() != spec.c_out * t_out {
                    return Err(Error::ShapeMismatch(format!(
                        "upstream gradient has {} values, expected {}",
                        g.len(),
                        spec.c_out * t_out
                    )));
                }
                for o in 0..spec.c_out {
                    for to in 0..t_out {
                        let go = g[o * t_out + to] * out_scale;
                        if go == 0.0 {
                            continue;
                        }
                        let start = (to * spec.stride) as isize - spec.padding as isize;
                        for i in 0..spec.c_in {
                            let widx = (o * spec.c_in + i) * k;
                            for kk in 0..k {
                                let pos = start + kk as isize;
                                if pos >= 0 && (pos as usize) < t {
                                    let xi = i * t + pos as usize;
                                    self.grad[widx + kk] += go * xq[xi];
                                    d_xq[xi] += go * w[widx + kk];
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Linear(spec) => {
                let (rows, n_in, n_out) = (cache.rows_or_len, spec.in_features, spec.out_features);
                if g.len() != rows * n_out {
                    return Err(Error::ShapeMismatch(format!(
                        "upstream gradient has {} values, expected {}",
                        g.len(),
                        rows * n_out
                    )));
                }
                for r in 0..rows {
                    for o in 0..n_out {
                        let go = g[r * n_out + o] * out_scale;
                        for i in 0..n_in {
                            self.grad[o * n_in + i] += go * xq[r * n_in + i];
                            d_xq[r * n_in + i] += go * w[o * n_in + i];
                        }
                    }
                }
            }
        }

        // Clip is passed straight through; gamma is frozen.
        let d_norm: Vec<f32> = d_xq.iter().map(|d| d * in_scale).collect();
        let axis = match self.spec {
            LayerSpec::Conv1d(_) => 0,
            LayerSpec::Linear(_) => cache.input_shape.len() - 1,
        };
        let dx =
            layer_norm_backward(&cache.prepared.normalized, &cache.prepared.rstd, &d_norm, &cache.input_shape, axis);
        Ok(FloatTensor::from_parts(cache.input_shape.clone(), dx))
    }

    /// Output of the stateless inference path for the current weights.
    pub fn infer(&self, x: &FloatTensor) -> Result<FloatTensor> {
        use crate::kernels::*;
        match (self.quantized()?, &self.spec) {
            (Some(QuantizedWeights::Ternary(w)), LayerSpec::Conv1d(s)) => ternary_conv1d_forward(x, s, &w, &self.cfg),
            (Some(QuantizedWeights::Ternary(w)), LayerSpec::Linear(_)) => ternary_linear_forward(x, &w, &self.cfg),
            (Some(QuantizedWeights::Int(w)), LayerSpec::Conv1d(s)) => int_conv1d_forward(x, s, &w, &self.cfg),
            (Some(QuantizedWeights::Int(w)), LayerSpec::Linear(_)) => int_linear_forward(x, &w, &self.cfg),
            (None, LayerSpec::Conv1d(s)) => float_conv1d_forward(x, s, &self.weights, &self.cfg),
            (None, LayerSpec::Linear(_)) => float_linear_forward(x, &self.weights, &self.cfg),
        }
    }
}

fn trits(values: &[i8]) -> Vec<Trit> {
    values.iter().map(|&v| Trit(v)).collect()
}

fn ints(values: &[i8]) -> Vec<IntTap> {
    values.iter().map(|&v| IntTap(v)).collect()
}

/// `dx = rstd * (du - mean(du) - u * mean(du * u))` per lane.
fn layer_norm_backward(u: &[f32], rstd: &[f32], du: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut dx = vec![0.0f32; u.len()];
    let n = len as f32;
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |k: usize| base + k * inner;
            let mean_du = (0..len).map(|k| du[idx(k)]).sum::<f32>() / n;
            let mean_duu = (0..len).map(|k| du[idx(k)] * u[idx(k)]).sum::<f32>() / n;
            let r = rstd[o * inner + i];
            for k in 0..len {
                dx[idx(k)] = r * (du[idx(k)] - mean_du - u[idx(k)] * mean_duu);
            }
        }
    }
    dx
}

/// Quantize-dequantize forward of one layer.
pub fn fake_quant_forward(layer: &mut FakeQuantLayer, x: &FloatTensor) -> Result<FloatTensor> {
    layer.forward(x)
}

/// Gradient with respect to the master weights for `upstream_grad` at the
/// layer output, using the most recent forward pass.
pub fn ste_backward(layer: &mut FakeQuantLayer, upstream_grad: &FloatTensor) -> Result<FloatTensor> {
    layer.zero_grad();
    layer.backward(upstream_grad)?;
    Ok(FloatTensor::from_parts(layer.spec.weight_shape(), layer.grad.clone()))
}
