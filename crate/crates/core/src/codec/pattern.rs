use crate::error::{Error, Result};

/// Largest block whose pattern count `3^L` fits in an 8-bit index.
pub const MAX_BLOCK_SIZE: usize = 5;

#[inline]
pub fn value_to_digit(v: i8) -> Option<u8> {
    match v {
        0 => Some(0),
        1 => Some(1),
        -1 => Some(2),
        _ => None,
    }
}

#[inline]
pub fn digit_to_value(d: u8) -> i8 {
    match d {
        0 => 0,
        1 => 1,
        _ => -1,
    }
}

/// Lookup table from pattern index to the ternary block it stands for.
///
/// Row `i` holds the `block_size` values whose base-3 digits (first value
/// least significant) spell `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTable {
    block_size: usize,
    patterns: Vec<i8>,
}

impl PatternTable {
    pub fn new(block_size: usize) -> Result<Self> {
        if block_size == 0 || block_size > MAX_BLOCK_SIZE {
            return Err(Error::InvalidBlockSize(block_size));
        }
        let count = 3usize.pow(block_size as u32);
        let mut patterns = Vec::with_capacity(count * block_size);
        for index in 0..count {
            let mut n = index;
            for _ in 0..block_size {
                patterns.push(digit_to_value((n % 3) as u8));
                n /= 3;
            }
        }
        Ok(Self { block_size, patterns })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Number of patterns, `3^block_size`.
    pub fn len(&self) -> usize {
        self.patterns.len() / self.block_size
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pattern(&self, index: u8) -> Result<&[i8]> {
        let i = index as usize;
        if i >= self.len() {
            return Err(Error::InvalidIndex { index, limit: self.len() as u32 });
        }
        Ok(&self.patterns[i * self.block_size..(i + 1) * self.block_size])
    }

    /// Index of a block of at most `block_size` values; missing trailing values count as 0.
    pub fn index_of(&self, block: &[i8]) -> Result<u8> {
        if block.len() > self.block_size {
            return Err(Error::LengthMismatch(format!(
                "block of {} values exceeds block size {}",
                block.len(),
                self.block_size
            )));
        }
        // Walk from the last value to the first so the first lands in the lowest digit.
        let mut n: u32 = 0;
        for (pos, &v) in block.iter().enumerate().rev() {
            let d = value_to_digit(v).ok_or(Error::NotTernary { position: pos, value: v })?;
            n = n * 3 + d as u32;
        }
        Ok(n as u8)
    }
}
