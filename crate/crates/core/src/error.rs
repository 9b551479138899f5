use thiserror::Error;

/// Errors produced by the quantization, codec, format, and training layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty weight tensor")]
    EmptyTensor,
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("value {value} at position {position} is not ternary")]
    NotTernary { position: usize, value: i8 },
    #[error("invalid index {index} (must be below {limit})")]
    InvalidIndex { index: u8, limit: u32 },
    #[error("block size {0} cannot be stored in 8-bit indices (must be 1..=5)")]
    InvalidBlockSize(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("huffman: {0}")]
    Huffman(String),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated input: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("invalid layer kind {0}")]
    InvalidKind(u8),
    #[error("invalid dtype {0}")]
    InvalidDtype(u8),
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("invalid name: {0}")]
    InvalidName(String),
    #[error("dimension overflow: {0}")]
    DimOverflow(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable numeric code for each failure class, used by tooling.
    pub fn code(&self) -> u16 {
        match self {
            Error::EmptyTensor => 1,
            Error::InvalidShape(_) => 2,
            Error::NonFinite(_) => 3,
            Error::InvalidConfig(_) => 4,
            Error::NotTernary { .. } => 5,
            Error::InvalidIndex { .. } => 6,
            Error::InvalidBlockSize(_) => 7,
            Error::LengthMismatch(_) => 8,
            Error::ShapeMismatch(_) => 9,
            Error::Huffman(_) => 10,
            Error::BadMagic(_) => 11,
            Error::UnsupportedVersion(_) => 12,
            Error::Truncated { .. } => 13,
            Error::TrailingBytes(_) => 14,
            Error::InvalidKind(_) => 15,
            Error::InvalidDtype(_) => 16,
            Error::DuplicateName(_) => 17,
            Error::InvalidName(_) => 18,
            Error::DimOverflow(_) => 19,
            Error::BackwardBeforeForward => 20,
            Error::Diverged { .. } => 21,
            Error::Io(_) => 22,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
