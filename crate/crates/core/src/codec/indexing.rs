use super::pattern::{PatternTable, MAX_BLOCK_SIZE};
use crate::error::{Error, Result};
use crate::tensor::{checked_numel, TernaryTensor};

pub const DEFAULT_BLOCK_SIZE: usize = 5;

/// Ternary tensor stored as one 8-bit pattern index per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWeights {
    indices: Vec<u8>,
    total_length: usize,
    block_size: usize,
    shape: Vec<usize>,
}

impl PackedWeights {
    /// Validates lengths, shape, and every index against `3^block_size`.
    pub fn new(indices: Vec<u8>, total_length: usize, block_size: usize, shape: Vec<usize>) -> Result<Self> {
        if block_size == 0 || block_size > MAX_BLOCK_SIZE {
            return Err(Error::InvalidBlockSize(block_size));
        }
        let n = checked_numel(&shape)?;
        if n != total_length {
            return Err(Error::LengthMismatch(format!(
                "shape {shape:?} holds {n} values but total length is {total_length}"
            )));
        }
        let blocks = total_length.div_ceil(block_size);
        if indices.len() != blocks {
            return Err(Error::LengthMismatch(format!(
                "{total_length} values in blocks of {block_size} need {blocks} indices, got {}",
                indices.len()
            )));
        }
        let limit = 3u32.pow(block_size as u32);
        if let Some(&index) = indices.iter().find(|&&i| i as u32 >= limit) {
            return Err(Error::InvalidIndex { index, limit });
        }
        Ok(Self { indices, total_length, block_size, shape })
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn total_length(&self) -> usize {
        self.total_length
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// Packs a ternary tensor, flattened row-major.
pub fn encode(ternary: &TernaryTensor, block_size: usize) -> Result<PackedWeights> {
    encode_values(ternary.values(), ternary.shape().to_vec(), block_size)
}

pub fn encode_values(values: &[i8], shape: Vec<usize>, block_size: usize) -> Result<PackedWeights> {
    let table = PatternTable::new(block_size)?;
    let mut indices = Vec::with_capacity(values.len().div_ceil(block_size));
    for (b, block) in values.chunks(block_size).enumerate() {
        let index = table.index_of(block).map_err(|e| match e {
            Error::NotTernary { position, value } => Error::NotTernary { position: b * block_size + position, value },
            other => other,
        })?;
        indices.push(index);
    }
    PackedWeights::new(indices, values.len(), block_size, shape)
}

/// Expands indices back into ternary values through the pattern table.
pub fn decode_values(packed: &PackedWeights) -> Result<Vec<i8>> {
    let table = PatternTable::new(packed.block_size)?;
    let mut out = Vec::with_capacity(packed.total_length);
    for &index in &packed.indices {
        let pattern = table.pattern(index)?;
        let take = (packed.total_length - out.len()).min(packed.block_size);
        out.extend_from_slice(&pattern[..take]);
    }
    if out.len() != packed.total_length {
        return Err(Error::LengthMismatch(format!("decoded {} values, expected {}", out.len(), packed.total_length)));
    }
    Ok(out)
}

/// Reconstructs the ternary tensor; the scale is not part of the index stream.
pub fn decode(packed: &PackedWeights, beta: f32) -> Result<TernaryTensor> {
    TernaryTensor::new(packed.shape.clone(), decode_values(packed)?, beta)
}

/// Occurrence counts of every pattern index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexHistogram {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl IndexHistogram {
    pub fn new(block_size: usize) -> Result<Self> {
        let table = PatternTable::new(block_size)?;
        Ok(Self { counts: vec![0; table.len()], total: 0 })
    }

    pub fn add(&mut self, indices: &[u8]) -> Result<()> {
        let limit = self.counts.len() as u32;
        for &i in indices {
            let slot = self.counts.get_mut(i as usize).ok_or(Error::InvalidIndex { index: i, limit })?;
            *slot += 1;
            self.total += 1;
        }
        Ok(())
    }

    /// `(index, count)` pairs sorted by descending count, ties by ascending index.
    pub fn ranked(&self) -> Vec<(usize, u64)> {
        let mut v: Vec<(usize, u64)> = self.counts.iter().copied().enumerate().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// 1-based rank of `index` by frequency.
    pub fn rank_of(&self, index: usize) -> usize {
        self.ranked().iter().position(|(i, _)| *i == index).map_or(usize::MAX, |p| p + 1)
    }
}

/// Counts indices across payloads. All payloads must share a block size;
/// with no payloads the histogram covers the default block size.
pub fn histogram<'a, I>(payloads: I) -> Result<IndexHistogram>
where
    I: IntoIterator<Item = &'a PackedWeights>,
{
    let mut hist: Option<(usize, IndexHistogram)> = None;
    for p in payloads {
        let (bs, h) = match &mut hist {
            Some(entry) => entry,
            None => hist.insert((p.block_size, IndexHistogram::new(p.block_size)?)),
        };
        if *bs != p.block_size {
            return Err(Error::InvalidConfig(format!("histogram over mixed block sizes {} and {}", bs, p.block_size)));
        }
        h.add(&p.indices)?;
    }
    match hist {
        Some((_, h)) => Ok(h),
        None => IndexHistogram::new(DEFAULT_BLOCK_SIZE),
    }
}
