use rand::Rng;

use super::layer::{FakeQuantLayer, LayerMode, LayerSpec};
use crate::codec::{decode, encode};
use crate::error::{Error, Result};
use crate::format::{LayerRecord, LayerWeights, QuantArchive};
use crate::kernels::{
    float_conv1d_forward, float_linear_forward, int_conv1d_forward, int_linear_forward, ternary_conv1d_forward,
    ternary_linear_forward,
};
use crate::quant::{QuantConfig, QuantizedWeights};
use crate::tensor::{FloatTensor, IntQuantTensor, TernaryTensor};

/// Nonlinearity applied between layers (not after the last).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f32) -> f32 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Stack of fake-quantized layers.
#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<FakeQuantLayer>,
    pub activation: Activation,
    hidden: Vec<FloatTensor>,
}

impl Model {
    pub fn new(layers: Vec<FakeQuantLayer>, activation: Activation) -> Self {
        Self { layers, activation, hidden: Vec::new() }
    }

    pub fn init<R: Rng>(
        specs: &[LayerSpec],
        activation: Activation,
        cfg: QuantConfig,
        mode: LayerMode,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = specs.iter().map(|&s| FakeQuantLayer::init(s, cfg, mode, rng)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(layers, activation))
    }

    pub fn set_mode(&mut self, mode: LayerMode) {
        for l in &mut self.layers {
            l.mode = mode;
        }
    }

    pub fn set_config(&mut self, cfg: QuantConfig) {
        for l in &mut self.layers {
            l.cfg = cfg;
        }
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(FakeQuantLayer::zero_grad);
    }

    /// Training forward; caches activations for [`Model::backward`].
    pub fn forward(&mut self, x: &FloatTensor) -> Result<FloatTensor> {
        self.hidden.clear();
        let last = self.layers.len().saturating_sub(1);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.map(|v| self.activation.apply(v));
                self.hidden.push(h.clone());
            }
        }
        Ok(h)
    }

    /// Backpropagates `grad_out` and accumulates weight gradients.
    pub fn backward(&mut self, grad_out: &FloatTensor) -> Result<FloatTensor> {
        if self.hidden.len() + 1 != self.layers.len() {
            return Err(Error::BackwardBeforeForward);
        }
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let y = &self.hidden[i];
                let data =
                    g.data().iter().zip(y.data()).map(|(gv, yv)| gv * self.activation.grad_from_output(*yv)).collect();
                g = FloatTensor::from_parts(g.shape().to_vec(), data);
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }

    /// Stateless forward through the inference kernels.
    pub fn infer(&self, x: &FloatTensor) -> Result<FloatTensor> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h)?;
            if i < last {
                h = h.map(|v| self.activation.apply(v));
            }
        }
        Ok(h)
    }

    /// Freezes the current weights into their stored form.
    pub fn quantize(&self) -> Result<QuantizedModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weights = match l.quantized()? {
                    Some(QuantizedWeights::Ternary(t)) => StoredWeights::Ternary(t),
                    Some(QuantizedWeights::Int(t)) => StoredWeights::Int(t),
                    None => StoredWeights::Float(l.weights().clone()),
                };
                Ok(QuantizedLayer { spec: l.spec, cfg: l.cfg, weights })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedModel { layers, activation: self.activation })
    }
}

/// Post-training quantization: quantize every layer of a float-trained model with no further training.
pub fn ptq_quantize(trained_float_model: &Model, cfg: QuantConfig) -> Result<QuantizedModel> {
    let mut m = trained_float_model.clone();
    m.set_config(cfg);
    m.set_mode(LayerMode::Quantized);
    m.quantize()
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredWeights {
    Ternary(TernaryTensor),
    Int(IntQuantTensor),
    Float(FloatTensor),
}

impl StoredWeights {
    pub fn dequantize(&self) -> FloatTensor {
        match self {
            StoredWeights::Ternary(t) => t.dequantize(),
            StoredWeights::Int(t) => t.dequantize(),
            StoredWeights::Float(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub spec: LayerSpec,
    pub cfg: QuantConfig,
    pub weights: StoredWeights,
}

impl QuantizedLayer {
    pub fn infer(&self, x: &FloatTensor) -> Result<FloatTensor> {
        match (&self.weights, &self.spec) {
            (StoredWeights::Ternary(w), LayerSpec::Conv1d(s)) => ternary_conv1d_forward(x, s, w, &self.cfg),
            (StoredWeights::Ternary(w), LayerSpec::Linear(_)) => ternary_linear_forward(x, w, &self.cfg),
            (StoredWeights::Int(w), LayerSpec::Conv1d(s)) => int_conv1d_forward(x, s, w, &self.cfg),
            (StoredWeights::Int(w), LayerSpec::Linear(_)) => int_linear_forward(x, w, &self.cfg),
            (StoredWeights::Float(w), LayerSpec::Conv1d(s)) => float_conv1d_forward(x, s, w, &self.cfg),
            (StoredWeights::Float(w), LayerSpec::Linear(_)) => float_linear_forward(x, w, &self.cfg),
        }
    }
}

/// Inference-only model with weights in stored form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub layers: Vec<QuantizedLayer>,
    pub activation: Activation,
}

impl QuantizedModel {
    pub fn infer(&self, x: &FloatTensor) -> Result<FloatTensor> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h)?;
            if i < last {
                h = h.map(|v| self.activation.apply(v));
            }
        }
        Ok(h)
    }

    /// Archive with one record per layer named `layers.<i>`.
    pub fn to_archive(&self, block_size: usize, huffman: bool) -> Result<QuantArchive> {
        let mut records = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let weights = match &l.weights {
                StoredWeights::Ternary(t) => LayerWeights::Ternary { packed: encode(t, block_size)?, beta: t.beta() },
                StoredWeights::Int(t) if t.bits() <= 4 => {
                    LayerWeights::Int4(IntQuantTensor::new(t.shape().to_vec(), t.values().to_vec(), 4, t.beta())?)
                }
                StoredWeights::Int(t) => {
                    LayerWeights::Int8(IntQuantTensor::new(t.shape().to_vec(), t.values().to_vec(), 8, t.beta())?)
                }
                StoredWeights::Float(t) => LayerWeights::Float32(t.clone()),
            };
            records.push(LayerRecord::new(format!("layers.{i}"), weights).with_huffman(huffman));
        }
        Ok(QuantArchive::new(records))
    }

    /// Rebuilds a model from archive records taken in order.
    pub fn from_archive(
        archive: &QuantArchive,
        specs: &[LayerSpec],
        activation: Activation,
        cfg: QuantConfig,
    ) -> Result<Self> {
        if archive.layers.len() != specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "archive has {} layers, model expects {}",
                archive.layers.len(),
                specs.len()
            )));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for (rec, &spec) in archive.layers.iter().zip(specs) {
            if rec.weights.shape() != spec.weight_shape() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {:?} has shape {:?}, expected {:?}",
                    rec.name,
                    rec.weights.shape(),
                    spec.weight_shape()
                )));
            }
            let weights = match &rec.weights {
                LayerWeights::Ternary { packed, beta } => StoredWeights::Ternary(decode(packed, *beta)?),
                LayerWeights::Int4(t) | LayerWeights::Int8(t) => StoredWeights::Int(t.clone()),
                LayerWeights::Float32(t) => StoredWeights::Float(t.clone()),
            };
            layers.push(QuantizedLayer { spec, cfg, weights });
        }
        Ok(Self { layers, activation })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Conv1dSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv1d(Conv1dSpec::new(2, 4, 3).with_padding(1)),
            LayerSpec::Conv1d(Conv1dSpec::new(4, 1, 3).with_padding(1)),
        ]
    }

    #[test]
    fn ptq_of_zero_model_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m =
            Model::init(&specs(), Activation::Tanh, QuantConfig::ternary(), LayerMode::FloatPassthrough, &mut rng)
                .unwrap();
        for l in &mut m.layers {
            let shape = l.spec.weight_shape();
            l.set_weights(FloatTensor::zeros(shape).unwrap()).unwrap();
        }
        let q = ptq_quantize(&m, QuantConfig::ternary()).unwrap();
        for l in &q.layers {
            assert!(l.weights.dequantize().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ptq_weights_take_three_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::init(&specs(), Activation::Tanh, QuantConfig::ternary(), LayerMode::FloatPassthrough, &mut rng)
            .unwrap();
        let q = ptq_quantize(&m, QuantConfig::ternary()).unwrap();
        for l in &q.layers {
            let StoredWeights::Ternary(t) = &l.weights else { panic!("expected ternary") };
            let b = t.beta();
            assert!(t.dequantize().data().iter().all(|&v| v == 0.0 || v == b || v == -b));
        }
    }

    #[test]
    fn quantized_model_matches_fake_quant_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m =
            Model::init(&specs(), Activation::Relu, QuantConfig::ternary(), LayerMode::Quantized, &mut rng).unwrap();
        let x = FloatTensor::new(vec![2, 6], (0..12).map(|i| (i as f32 * 0.9).cos()).collect()).unwrap();
        let q = m.quantize().unwrap();
        let train_out = m.forward(&x).unwrap();
        assert_eq!(train_out, m.infer(&x).unwrap());
        assert_eq!(train_out, q.infer(&x).unwrap());

        let archive = q.to_archive(5, true).unwrap();
        let bytes = archive.write().unwrap();
        let back = QuantArchive::read(&bytes).unwrap();
        let q2 = QuantizedModel::from_archive(&back, &specs(), Activation::Relu, QuantConfig::ternary()).unwrap();
        assert_eq!(q2.infer(&x).unwrap(), train_out);
    }
}
