//! Dense tensor containers shared by every stage of the pipeline.

use crate::error::{Error, Result};

pub(crate) fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("rank must be at least 1".into()));
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(Error::InvalidShape(format!("zero-sized dimension in {shape:?}")));
        }
        n = n.checked_mul(d).ok_or_else(|| Error::DimOverflow(format!("{shape:?}")))?;
    }
    Ok(n)
}

/// Row-major `f32` tensor with finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FloatTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if n != data.len() {
            return Err(Error::LengthMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { shape, data })
    }

    /// One-dimensional tensor over `data`.
    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        Ok(Self { shape, data: vec![0.0; n] })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Ternary weights in {-1, 0, 1} with their per-tensor scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryTensor {
    shape: Vec<usize>,
    values: Vec<i8>,
    beta: f32,
}

impl TernaryTensor {
    pub fn new(shape: Vec<usize>, values: Vec<i8>, beta: f32) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if n != values.len() {
            return Err(Error::LengthMismatch(format!("shape {shape:?} needs {n} values, got {}", values.len())));
        }
        if let Some(position) = values.iter().position(|v| !(-1..=1).contains(v)) {
            return Err(Error::NotTernary { position, value: values[position] });
        }
        check_scale(beta)?;
        Ok(Self { shape, values, beta })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_beta(mut self, beta: f32) -> Result<Self> {
        check_scale(beta)?;
        self.beta = beta;
        Ok(self)
    }

    /// Effective float weights `value * beta`, each in {-beta, 0, beta}.
    pub fn dequantize(&self) -> FloatTensor {
        FloatTensor::from_parts(self.shape.clone(), self.values.iter().map(|&v| v as f32 * self.beta).collect())
    }
}

/// Signed b-bit integer weights in `[-2^(b-1), 2^(b-1) - 1]` with a per-tensor scale.
#[derive(Debug, Clone, PartialEq)]
pub struct IntQuantTensor {
    shape: Vec<usize>,
    values: Vec<i8>,
    bits: u8,
    beta: f32,
}

impl IntQuantTensor {
    pub fn new(shape: Vec<usize>, values: Vec<i8>, bits: u8, beta: f32) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return Err(Error::InvalidConfig(format!("integer precision must be 2..=8 bits, got {bits}")));
        }
        let n = checked_numel(&shape)?;
        if n != values.len() {
            return Err(Error::LengthMismatch(format!("shape {shape:?} needs {n} values, got {}", values.len())));
        }
        let q = 1i16 << (bits - 1);
        if let Some(pos) = values.iter().position(|&v| (v as i16) < -q || (v as i16) > q - 1) {
            return Err(Error::InvalidConfig(format!(
                "value {} at position {pos} outside {bits}-bit range",
                values[pos]
            )));
        }
        check_scale(beta)?;
        Ok(Self { shape, values, bits, beta })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dequantize(&self) -> FloatTensor {
        FloatTensor::from_parts(self.shape.clone(), self.values.iter().map(|&v| v as f32 * self.beta).collect())
    }
}

fn check_scale(beta: f32) -> Result<()> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidConfig(format!("scale must be finite and non-negative, got {beta}")));
    }
    Ok(())
}
