use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::FloatTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<FloatTensor>,
    pub targets: Vec<FloatTensor>,
}

impl Dataset {
    pub fn new(inputs: Vec<FloatTensor>, targets: Vec<FloatTensor>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Minibatch SGD with momentum on mean squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// 0 gives plain SGD.
    pub momentum: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { seed: 0, steps: 1000, batch_size: 16, learning_rate: 0.05, momentum: 0.9 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean batch loss per step.
    pub loss_trace: Vec<f64>,
}

fn mse(y: &FloatTensor, t: &FloatTensor) -> Result<f64> {
    if y.shape() != t.shape() {
        return Err(Error::ShapeMismatch(format!("output {:?} vs target {:?}", y.shape(), t.shape())));
    }
    let sum: f64 = y.data().iter().zip(t.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    Ok(sum / y.len() as f64)
}

/// Trains `model` in place of its current mode. Deterministic for a fixed seed.
pub fn train(mut model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.steps > 0 && data.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Vec<f32>> = model.layers.iter().map(|l| vec![0.0; l.weights().len()]).collect();
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let inv_batch = 1.0 / cfg.batch_size as f32;

    for step in 0..cfg.steps {
        model.zero_grad();
        let mut loss = 0.0f64;
        for _ in 0..cfg.batch_size {
            let i = rng.gen_range(0..data.len());
            let (x, t) = (&data.inputs[i], &data.targets[i]);
            let y = model.forward(x)?;
            loss += mse(&y, t)?;
            let scale = 2.0 / y.len() as f32 * inv_batch;
            let g = y.data().iter().zip(t.data()).map(|(a, b)| (a - b) * scale).collect();
            model.backward(&FloatTensor::from_parts(y.shape().to_vec(), g))?;
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        loss_trace.push(loss);
        for (layer, v) in model.layers.iter_mut().zip(&mut velocity) {
            for (vi, gi) in v.iter_mut().zip(layer.grad()) {
                *vi = cfg.momentum * *vi + gi;
            }
            layer.apply_update(v, cfg.learning_rate);
        }
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Mean squared error of `predict` over the dataset (mean over samples of per-sample MSE).
pub fn eval_mse<F>(data: &Dataset, mut predict: F) -> Result<f64>
where
    F: FnMut(&FloatTensor) -> Result<FloatTensor>,
{
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        total += mse(&predict(x)?, t)?;
    }
    Ok(total / data.len() as f64)
}
