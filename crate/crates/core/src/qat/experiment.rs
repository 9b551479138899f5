use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::layer::{FakeQuantLayer, LayerMode, LayerSpec};
use super::model::{ptq_quantize, Activation, Model};
use super::train::{eval_mse, train, Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::kernels::Conv1dSpec;
use crate::quant::QuantConfig;
use crate::tensor::FloatTensor;

/// Starting point of the QAT student.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QatInit {
    /// Same random initialization as the float student.
    Scratch,
    /// Continue from the converged float student.
    FineTune,
}

/// Teacher-student conv1d regression, repeated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Channel counts from input to output; one conv layer per adjacent pair.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub seq_len: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Standard deviation of the target noise.
    pub noise: f32,
    pub quant: QuantConfig,
    pub qat_init: QatInit,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            steps: 3000,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
            channels: vec![4, 8, 8, 2],
            kernel_size: 3,
            seq_len: 16,
            train_samples: 2048,
            eval_samples: 512,
            noise: 0.01,
            quant: QuantConfig::ternary(),
            qat_init: QatInit::Scratch,
        }
    }
}

impl ExperimentConfig {
    pub fn with_seeds(mut self, n: usize) -> Self {
        self.seeds = (0..n as u64).collect();
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.channels
            .windows(2)
            .map(|w| {
                LayerSpec::Conv1d(Conv1dSpec::new(w[0], w[1], self.kernel_size).with_padding(self.kernel_size / 2))
            })
            .collect()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad channel list {:?}", self.channels)));
        }
        if self.seq_len == 0 || self.train_samples == 0 || self.eval_samples == 0 {
            return Err(Error::InvalidConfig("sequence length and sample counts must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be non-negative, got {}", self.noise)));
        }
        self.quant.validate()?;
        self.train_config(0).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedRecord {
    pub seed: u64,
    pub float_loss: f64,
    pub ptq_loss: f64,
    pub qat_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.6}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<SeedRecord>,
}

const REPORT_HEADER: &str = "seed,float_loss,ptq_loss,qat_loss";

impl ExperimentReport {
    fn column(&self, f: impl Fn(&SeedRecord) -> f64) -> Summary {
        Summary::of(&self.records.iter().map(f).collect::<Vec<_>>())
    }

    pub fn float_summary(&self) -> Summary {
        self.column(|r| r.float_loss)
    }

    pub fn ptq_summary(&self) -> Summary {
        self.column(|r| r.ptq_loss)
    }

    pub fn qat_summary(&self) -> Summary {
        self.column(|r| r.qat_loss)
    }

    /// Mean QAT loss below mean PTQ loss by more than the QAT spread.
    pub fn qat_beats_ptq(&self) -> bool {
        let (ptq, qat) = (self.ptq_summary(), self.qat_summary());
        qat.mean < ptq.mean && ptq.mean - qat.mean > qat.std
    }

    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| r.float_loss.is_finite() && r.ptq_loss.is_finite() && r.qat_loss.is_finite())
    }

    /// One CSV record per seed. Losses use round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", r.seed, r.float_loss, r.ptq_loss, r.qat_loss));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            other => return Err(Error::InvalidConfig(format!("unexpected report header {other:?}"))),
        }
        let records = lines
            .map(|line| {
                let bad = || Error::InvalidConfig(format!("malformed report line {line:?}"));
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                if fields.len() != 4 {
                    return Err(bad());
                }
                let loss = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
                Ok(SeedRecord {
                    seed: fields[0].parse().map_err(|_| bad())?,
                    float_loss: loss(1)?,
                    ptq_loss: loss(2)?,
                    qat_loss: loss(3)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records })
    }
}

/// Random teacher with weights in `beta * {-1, 0, 1}`, run through the
/// quantized path so a quantized student can represent it exactly.
fn ternary_teacher<R: Rng>(specs: &[LayerSpec], cfg: QuantConfig, rng: &mut R) -> Result<Model> {
    let layers = specs
        .iter()
        .map(|&spec| {
            let shape = spec.weight_shape();
            let n: usize = shape.iter().product();
            let beta = 1.0 / (spec.fan_in() as f32 * 2.0 / 3.0).sqrt();
            let mut data: Vec<f32> = (0..n).map(|_| (rng.gen_range(-1i32..=1) as f32) * beta).collect();
            if data.iter().all(|&v| v == 0.0) {
                data[0] = beta;
            }
            FakeQuantLayer::new(spec, cfg, LayerMode::Quantized, FloatTensor::new(shape, data)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Model::new(layers, Activation::Tanh))
}

fn sample_dataset<R: Rng>(teacher: &Model, cfg: &ExperimentConfig, n: usize, rng: &mut R) -> Result<Dataset> {
    let c_in = cfg.channels[0];
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f32> = (0..c_in * cfg.seq_len).map(|_| StandardNormal.sample(rng)).collect();
        let x = FloatTensor::new(vec![c_in, cfg.seq_len], x)?;
        let y = teacher.infer(&x)?;
        let data = y.data().iter().map(|v| v + cfg.noise * Distribution::<f32>::sample(&StandardNormal, rng)).collect();
        let t = FloatTensor::new(y.shape().to_vec(), data)?;
        inputs.push(x);
        targets.push(t);
    }
    Dataset::new(inputs, targets)
}

/// Runs one seed: float student, PTQ of it, and a QAT student.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRecord> {
    let specs = cfg.layer_specs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher = ternary_teacher(&specs, cfg.quant, &mut rng)?;
    let train_set = sample_dataset(&teacher, cfg, cfg.train_samples, &mut rng)?;
    let eval_set = sample_dataset(&teacher, cfg, cfg.eval_samples, &mut rng)?;
    let init = Model::init(&specs, Activation::Tanh, cfg.quant, LayerMode::FloatPassthrough, &mut rng)?;
    let train_cfg = cfg.train_config(rng.gen());

    let float_model = train(init.clone(), &train_set, &train_cfg)?.model;
    let float_loss = eval_mse(&eval_set, |x| float_model.infer(x))?;

    let ptq = ptq_quantize(&float_model, cfg.quant)?;
    let ptq_loss = eval_mse(&eval_set, |x| ptq.infer(x))?;

    let mut student = match cfg.qat_init {
        QatInit::Scratch => init,
        QatInit::FineTune => float_model,
    };
    student.set_mode(LayerMode::Quantized);
    let qat = train(student, &train_set, &train_cfg)?.model.quantize()?;
    let qat_loss = eval_mse(&eval_set, |x| qat.infer(x))?;

    Ok(SeedRecord { seed, float_loss, ptq_loss, qat_loss })
}

/// Runs every seed (in parallel; each seed is independent and deterministic).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let records = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { records })
}
