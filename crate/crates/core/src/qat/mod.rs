//! Fake-quantization training.
//!
//! Layers keep float32 master weights. The forward pass quantizes them on
//! the fly and runs the same kernels used for inference; the backward pass
//! treats the weight quantizer as the identity (straight-through estimator)
//! and freezes `gamma` and `beta` as constants of the forward pass.

mod experiment;
mod layer;
mod model;
mod train;

pub use experiment::{run_experiment, run_seed, ExperimentConfig, ExperimentReport, QatInit, SeedRecord, Summary};
pub use layer::{fake_quant_forward, ste_backward, FakeQuantLayer, LayerMode, LayerSpec};
pub use model::{ptq_quantize, Activation, Model, QuantizedLayer, QuantizedModel, StoredWeights};
pub use train::{eval_mse, train, Dataset, TrainConfig, TrainOutcome};
