//! Base-3 weight indexing and the optional Huffman stage.
//!
//! A flattened ternary tensor is split into blocks of `block_size` values
//! (5 by default). Each block becomes one byte: the first value of the block
//! is the least-significant base-3 digit, with digit 0 for 0, 1 for +1 and 2
//! for -1. A short final block leaves its high digits at zero, so the
//! original length must travel with the indices.

mod huffman;
mod indexing;
mod pattern;
mod sizes;

pub use huffman::{huffman_decode, huffman_encode, HuffmanCodedPayload, MAX_CODE_LEN};
pub use indexing::{
    decode, decode_values, encode, encode_values, histogram, IndexHistogram, PackedWeights, DEFAULT_BLOCK_SIZE,
};
pub use pattern::{digit_to_value, value_to_digit, PatternTable, MAX_BLOCK_SIZE};
pub use sizes::{packed_size_bytes, StorageMode};
