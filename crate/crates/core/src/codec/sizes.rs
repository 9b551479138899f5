/// Storage schemes compared by [`packed_size_bytes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageMode {
    /// Information-theoretic bound, `log2(3)` bits per weight.
    Ideal,
    /// One byte per weight.
    RawInt8,
    /// One byte per block of five weights.
    Indexed,
    /// Two weights per byte.
    Int4,
}

impl StorageMode {
    pub const ALL: [StorageMode; 4] =
        [StorageMode::Ideal, StorageMode::RawInt8, StorageMode::Indexed, StorageMode::Int4];

    pub fn name(self) -> &'static str {
        match self {
            StorageMode::Ideal => "ideal-1.58",
            StorageMode::RawInt8 => "raw-int8",
            StorageMode::Indexed => "indexed",
            StorageMode::Int4 => "int4",
        }
    }
}

/// Bytes needed to store `num_weights` weights under `mode`.
pub fn packed_size_bytes(num_weights: u64, mode: StorageMode) -> f64 {
    match mode {
        StorageMode::Ideal => num_weights as f64 * 3f64.log2() / 8.0,
        StorageMode::RawInt8 => num_weights as f64,
        StorageMode::Indexed => num_weights.div_ceil(super::DEFAULT_BLOCK_SIZE as u64) as f64,
        StorageMode::Int4 => num_weights.div_ceil(2) as f64,
    }
}
