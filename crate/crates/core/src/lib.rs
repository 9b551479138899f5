//! Ternary (1.58-bit) and low-bit weight quantization toolkit.
//!
//! - [`quant`]: absmean weight quantization, activation scaling, output rescaling
//! - [`codec`]: base-3 weight indexing (five ternary weights per byte) and canonical Huffman coding
//! - [`format`]: the `.btw` float archive and `.btq` quantized archive formats, size reports
//! - [`kernels`]: ternary/integer linear and 1-D convolution forward passes
//! - [`qat`]: fake-quantization training with a straight-through estimator, PTQ, and the QAT-vs-PTQ experiment
//! - [`cli`]: the `ternq` command-line front end

pub mod cli;
pub mod codec;
pub mod error;
pub mod format;
pub mod kernels;
pub mod qat;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
pub use quant::{QuantConfig, Rounding, WeightBits};
pub use tensor::{FloatTensor, IntQuantTensor, TernaryTensor};
