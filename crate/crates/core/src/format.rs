//! On-disk containers.
//!
//! Both formats are little-endian with a 4-byte magic and a version byte.
//!
//! `.btw` (float input):
//! ```text
//! "BITW" u8:version u16:tensor_count
//! per tensor: u16:name_len name u8:rank u32*rank:dims u8:dtype(0=f32) f32*numel
//! ```
//!
//! `.btq` (quantized output):
//! ```text
//! "BITQ" u8:version u16:layer_count
//! per layer: u16:name_len name u8:kind u8:rank u32*rank:dims
//!            [u8:block_size if kind 0] [f32:beta if kind 0..=2]
//!            u8:huffman_flag u64:payload_len payload
//! ```
//! Kinds: 0 ternary indices, 1 int4 (two per byte, low nibble first),
//! 2 int8, 3 float32 passthrough. With the Huffman flag set the payload is a
//! canonical Huffman encoding of the plain payload bytes: 256 code lengths,
//! a u64 symbol count, then the bitstream.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use crate::codec::{self, huffman_decode, huffman_encode, HuffmanCodedPayload, PackedWeights, MAX_BLOCK_SIZE};
use crate::error::{Error, Result};
use crate::quant::{quantize_b_bit, quantize_ternary, QuantConfig, WeightBits};
use crate::tensor::{checked_numel, FloatTensor, IntQuantTensor};

pub const FLOAT_MAGIC: [u8; 4] = *b"BITW";
pub const QUANT_MAGIC: [u8; 4] = *b"BITQ";
pub const FORMAT_VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: FloatTensor,
}

/// Named float32 tensors, typically pre-trained weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FloatArchive {
    pub tensors: Vec<NamedTensor>,
}

impl FloatArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: FloatTensor) {
        self.tensors.push(NamedTensor { name: name.into(), tensor });
    }

    pub fn get(&self, name: &str) -> Option<&FloatTensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn write(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(&FLOAT_MAGIC);
        w.u8(FORMAT_VERSION);
        w.u16(count_u16(self.tensors.len(), "tensor count")?);
        check_unique(self.tensors.iter().map(|t| t.name.as_str()))?;
        for t in &self.tensors {
            w.name(&t.name)?;
            w.dims(t.tensor.shape())?;
            w.u8(DTYPE_F32);
            for v in t.tensor.data() {
                w.bytes(&v.to_le_bytes());
            }
        }
        Ok(w.buf)
    }

    pub fn read(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(FLOAT_MAGIC)?;
        let count = r.u16()?;
        let mut tensors = Vec::with_capacity(count as usize);
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name = r.name()?;
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateName(name));
            }
            let shape = r.dims()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::InvalidDtype(dtype));
            }
            let n = checked_numel(&shape)?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::DimOverflow(format!("{shape:?}")))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, tensor: FloatTensor::new(shape, data)? });
        }
        r.finish()?;
        Ok(Self { tensors })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&read_bytes(path.as_ref())?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &self.write()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    TernaryIndexed = 0,
    Int4Packed = 1,
    Int8Raw = 2,
    Float32 = 3,
}

impl LayerKind {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(LayerKind::TernaryIndexed),
            1 => Ok(LayerKind::Int4Packed),
            2 => Ok(LayerKind::Int8Raw),
            3 => Ok(LayerKind::Float32),
            other => Err(Error::InvalidKind(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::TernaryIndexed => "ternary-indexed",
            LayerKind::Int4Packed => "int4-packed",
            LayerKind::Int8Raw => "int8-raw",
            LayerKind::Float32 => "float32",
        }
    }

    fn has_beta(self) -> bool {
        self != LayerKind::Float32
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stored weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Ternary {
        packed: PackedWeights,
        beta: f32,
    },
    /// Values in [-8, 7]; the tensor's `bits` is 4.
    Int4(IntQuantTensor),
    /// The tensor's `bits` is 8.
    Int8(IntQuantTensor),
    Float32(FloatTensor),
}

impl LayerWeights {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerWeights::Ternary { .. } => LayerKind::TernaryIndexed,
            LayerWeights::Int4(_) => LayerKind::Int4Packed,
            LayerWeights::Int8(_) => LayerKind::Int8Raw,
            LayerWeights::Float32(_) => LayerKind::Float32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            LayerWeights::Ternary { packed, .. } => packed.shape(),
            LayerWeights::Int4(t) | LayerWeights::Int8(t) => t.shape(),
            LayerWeights::Float32(t) => t.shape(),
        }
    }

    pub fn num_weights(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn beta(&self) -> Option<f32> {
        match self {
            LayerWeights::Ternary { beta, .. } => Some(*beta),
            LayerWeights::Int4(t) | LayerWeights::Int8(t) => Some(t.beta()),
            LayerWeights::Float32(_) => None,
        }
    }

    /// Effective float weights.
    pub fn dequantize(&self) -> Result<FloatTensor> {
        match self {
            LayerWeights::Ternary { packed, beta } => Ok(codec::decode(packed, *beta)?.dequantize()),
            LayerWeights::Int4(t) | LayerWeights::Int8(t) => Ok(t.dequantize()),
            LayerWeights::Float32(t) => Ok(t.clone()),
        }
    }

    /// Payload bytes before the optional Huffman stage.
    pub fn plain_payload(&self) -> Result<Vec<u8>> {
        match self {
            LayerWeights::Ternary { packed, .. } => Ok(packed.indices().to_vec()),
            LayerWeights::Int4(t) => {
                if t.bits() != 4 {
                    return Err(Error::InvalidConfig(format!("int4 layer holds {}-bit values", t.bits())));
                }
                Ok(pack_int4(t.values()))
            }
            LayerWeights::Int8(t) => {
                if t.bits() != 8 {
                    return Err(Error::InvalidConfig(format!("int8 layer holds {}-bit values", t.bits())));
                }
                Ok(t.values().iter().map(|&v| v as u8).collect())
            }
            LayerWeights::Float32(t) => Ok(t.data().iter().flat_map(|v| v.to_le_bytes()).collect()),
        }
    }
}

/// Packs signed values in [-8, 7] two per byte, low nibble first. An odd
/// count leaves the final high nibble zero.
pub fn pack_int4(values: &[i8]) -> Vec<u8> {
    values
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] as u8) & 0x0F;
            let hi = pair.get(1).map_or(0, |&v| (v as u8) & 0x0F);
            lo | (hi << 4)
        })
        .collect()
}

pub fn unpack_int4(bytes: &[u8], count: usize) -> Result<Vec<i8>> {
    if bytes.len() != count.div_ceil(2) {
        return Err(Error::LengthMismatch(format!(
            "{count} int4 values need {} bytes, got {}",
            count.div_ceil(2),
            bytes.len()
        )));
    }
    let sext = |n: u8| ((n << 4) as i8) >> 4;
    let mut out = Vec::with_capacity(count);
    for &b in bytes {
        out.push(sext(b & 0x0F));
        if out.len() < count {
            out.push(sext(b >> 4));
        }
    }
    if count % 2 == 1 && bytes[bytes.len() - 1] >> 4 != 0 {
        return Err(Error::LengthMismatch("non-zero padding nibble".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub huffman: bool,
    pub weights: LayerWeights,
}

impl LayerRecord {
    pub fn new(name: impl Into<String>, weights: LayerWeights) -> Self {
        Self { name: name.into(), huffman: false, weights }
    }

    pub fn with_huffman(mut self, huffman: bool) -> Self {
        self.huffman = huffman;
        self
    }

    pub fn kind(&self) -> LayerKind {
        self.weights.kind()
    }

    /// Payload exactly as written to disk.
    pub fn stored_payload(&self) -> Result<Vec<u8>> {
        let plain = self.weights.plain_payload()?;
        if self.huffman {
            Ok(huffman_encode(&plain)?.to_bytes())
        } else {
            Ok(plain)
        }
    }

    /// Bytes of the record excluding the payload.
    pub fn metadata_bytes(&self) -> usize {
        let kind = self.kind();
        2 + self.name.len()
            + 1
            + 1
            + 4 * self.weights.shape().len()
            + usize::from(kind == LayerKind::TernaryIndexed)
            + if kind.has_beta() { 4 } else { 0 }
            + 1
            + 8
    }
}

/// Quantized model container.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantArchive {
    pub layers: Vec<LayerRecord>,
}

impl QuantArchive {
    pub fn new(layers: Vec<LayerRecord>) -> Self {
        Self { layers }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn write(&self) -> Result<Vec<u8>> {
        write_quant_archive(&self.layers)
    }

    pub fn read(bytes: &[u8]) -> Result<Self> {
        read_quant_archive(bytes).map(Self::new)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&read_bytes(path.as_ref())?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &self.write()?)
    }
}

pub fn write_quant_archive(layers: &[LayerRecord]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&QUANT_MAGIC);
    w.u8(FORMAT_VERSION);
    w.u16(count_u16(layers.len(), "layer count")?);
    check_unique(layers.iter().map(|l| l.name.as_str()))?;
    for layer in layers {
        let kind = layer.kind();
        w.name(&layer.name)?;
        w.u8(kind as u8);
        w.dims(layer.weights.shape())?;
        if let LayerWeights::Ternary { packed, .. } = &layer.weights {
            w.u8(packed.block_size() as u8);
        }
        if let Some(beta) = layer.weights.beta() {
            if !beta.is_finite() || beta < 0.0 {
                return Err(Error::InvalidConfig(format!("layer {:?} has invalid scale {beta}", layer.name)));
            }
            w.bytes(&beta.to_le_bytes());
        }
        w.u8(u8::from(layer.huffman));
        let payload = layer.stored_payload()?;
        w.bytes(&(payload.len() as u64).to_le_bytes());
        w.bytes(&payload);
    }
    Ok(w.buf)
}

pub fn read_quant_archive(bytes: &[u8]) -> Result<Vec<LayerRecord>> {
    let mut r = Reader::new(bytes);
    r.magic(QUANT_MAGIC)?;
    let count = r.u16()?;
    let mut layers = Vec::with_capacity(count as usize);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name = r.name()?;
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let kind = LayerKind::from_u8(r.u8()?)?;
        let shape = r.dims()?;
        let n = checked_numel(&shape)?;
        let block_size = if kind == LayerKind::TernaryIndexed {
            let bs = r.u8()? as usize;
            if bs == 0 || bs > MAX_BLOCK_SIZE {
                return Err(Error::InvalidBlockSize(bs));
            }
            bs
        } else {
            0
        };
        let beta = if kind.has_beta() {
            let b = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            if !b.is_finite() || b < 0.0 {
                return Err(Error::InvalidConfig(format!("layer {name:?} has invalid scale {b}")));
            }
            b
        } else {
            0.0
        };
        let huffman = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::InvalidConfig(format!("huffman flag must be 0 or 1, got {other}"))),
        };
        let len = r.u64()?;
        let len = usize::try_from(len).map_err(|_| Error::DimOverflow(format!("payload length {len}")))?;
        let stored = r.take(len)?;
        let plain = if huffman { huffman_decode(&HuffmanCodedPayload::from_bytes(stored)?)? } else { stored.to_vec() };
        let weights = match kind {
            LayerKind::TernaryIndexed => {
                let packed = PackedWeights::new(plain, n, block_size, shape)?;
                LayerWeights::Ternary { packed, beta }
            }
            LayerKind::Int4Packed => LayerWeights::Int4(IntQuantTensor::new(shape, unpack_int4(&plain, n)?, 4, beta)?),
            LayerKind::Int8Raw => {
                if plain.len() != n {
                    return Err(Error::LengthMismatch(format!("{n} int8 values, got {} bytes", plain.len())));
                }
                let values = plain.iter().map(|&b| b as i8).collect();
                LayerWeights::Int8(IntQuantTensor::new(shape, values, 8, beta)?)
            }
            LayerKind::Float32 => {
                if plain.len() != 4 * n {
                    return Err(Error::LengthMismatch(format!("{n} float32 values, got {} bytes", plain.len())));
                }
                let data = plain.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                LayerWeights::Float32(FloatTensor::new(shape, data)?)
            }
        };
        layers.push(LayerRecord { name, huffman, weights });
    }
    r.finish()?;
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeEntry {
    pub name: String,
    pub kind: LayerKind,
    pub num_weights: u64,
    pub raw_float_bytes: u64,
    pub payload_bytes: u64,
    pub stored_bytes: u64,
}

/// Float32 versus stored size, per layer and in total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SizeReport {
    pub entries: Vec<SizeEntry>,
    pub total_raw_bytes: u64,
    pub total_stored_bytes: u64,
}

impl SizeReport {
    pub fn from_entries(entries: Vec<SizeEntry>) -> Self {
        let total_raw_bytes = entries.iter().map(|e| e.raw_float_bytes).sum();
        let total_stored_bytes = entries.iter().map(|e| e.stored_bytes).sum();
        Self { entries, total_raw_bytes, total_stored_bytes }
    }

    pub fn total_payload_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.payload_bytes).sum()
    }

    pub fn reduction_percent(&self) -> f64 {
        reduction_percent(self.total_raw_bytes as f64, self.total_stored_bytes as f64)
    }

    /// CSV with a header row, one row per layer and a `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,kind,num_weights,raw_float_bytes,payload_bytes,stored_bytes,reduction_pct\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.2}\n",
                e.name,
                e.kind,
                e.num_weights,
                e.raw_float_bytes,
                e.payload_bytes,
                e.stored_bytes,
                reduction_percent(e.raw_float_bytes as f64, e.stored_bytes as f64)
            ));
        }
        s.push_str(&format!(
            "TOTAL,,{},{},{},{},{:.2}\n",
            self.entries.iter().map(|e| e.num_weights).sum::<u64>(),
            self.total_raw_bytes,
            self.total_payload_bytes(),
            self.total_stored_bytes,
            self.reduction_percent()
        ));
        s
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

/// `(raw - stored) / raw * 100`; zero when `raw` is zero.
pub fn reduction_percent(raw: f64, stored: f64) -> f64 {
    if raw == 0.0 {
        return 0.0;
    }
    (raw - stored) / raw * 100.0
}

pub fn size_report(archive: &QuantArchive) -> Result<SizeReport> {
    let mut entries = Vec::with_capacity(archive.layers.len());
    for layer in &archive.layers {
        let n = layer.weights.num_weights() as u64;
        let payload = layer.stored_payload()?.len() as u64;
        entries.push(SizeEntry {
            name: layer.name.clone(),
            kind: layer.kind(),
            num_weights: n,
            raw_float_bytes: 4 * n,
            payload_bytes: payload,
            stored_bytes: payload + layer.metadata_bytes() as u64,
        });
    }
    Ok(SizeReport::from_entries(entries))
}

/// How float tensors are turned into archive layers.
#[derive(Debug, Clone)]
pub struct QuantizeOptions {
    pub cfg: QuantConfig,
    pub block_size: usize,
    pub huffman: bool,
    /// Tensors whose names match any of these globs stay float32.
    pub keep_float: Vec<glob::Pattern>,
    /// Store 2..=4-bit values one per byte instead of nibble-packed.
    pub int4_as_int8: bool,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        Self {
            cfg: QuantConfig::default(),
            block_size: codec::DEFAULT_BLOCK_SIZE,
            huffman: false,
            keep_float: Vec::new(),
            int4_as_int8: false,
        }
    }
}

impl QuantizeOptions {
    pub fn keeps_float(&self, name: &str) -> bool {
        self.keep_float.iter().any(|p| p.matches(name))
    }
}

pub fn quantize_tensor(name: &str, tensor: &FloatTensor, opts: &QuantizeOptions) -> Result<LayerRecord> {
    let weights = if opts.keeps_float(name) {
        LayerWeights::Float32(tensor.clone())
    } else {
        match opts.cfg.weight_bits {
            WeightBits::Ternary => {
                let t = quantize_ternary(tensor, &opts.cfg)?;
                LayerWeights::Ternary { packed: codec::encode(&t, opts.block_size)?, beta: t.beta() }
            }
            WeightBits::Int(b) => {
                let t = quantize_b_bit(tensor, &opts.cfg)?;
                let values = t.values().to_vec();
                if b <= 4 && !opts.int4_as_int8 {
                    LayerWeights::Int4(IntQuantTensor::new(t.shape().to_vec(), values, 4, t.beta())?)
                } else {
                    LayerWeights::Int8(IntQuantTensor::new(t.shape().to_vec(), values, 8, t.beta())?)
                }
            }
        }
    };
    Ok(LayerRecord::new(name, weights).with_huffman(opts.huffman))
}

pub fn quantize_archive(input: &FloatArchive, opts: &QuantizeOptions) -> Result<QuantArchive> {
    input
        .tensors
        .iter()
        .map(|t| quantize_tensor(&t.name, &t.tensor, opts))
        .collect::<Result<Vec<_>>>()
        .map(QuantArchive::new)
}

fn count_u16(n: usize, what: &str) -> Result<u16> {
    u16::try_from(n).map_err(|_| Error::DimOverflow(format!("{what} {n} exceeds u16")))
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::DuplicateName(n.to_string()));
        }
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    fn name(&mut self, name: &str) -> Result<()> {
        if name.is_empty() {
            return Err(Error::InvalidName("empty name".into()));
        }
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidName(format!("name of {} bytes exceeds u16", name.len())))?;
        self.u16(len);
        self.bytes(name.as_bytes());
        Ok(())
    }

    fn dims(&mut self, shape: &[usize]) -> Result<()> {
        let rank = u8::try_from(shape.len()).map_err(|_| Error::DimOverflow(format!("rank {}", shape.len())))?;
        self.u8(rank);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::DimOverflow(format!("dimension {d} exceeds u32")))?;
            self.bytes(&d.to_le_bytes());
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated { offset: self.pos, needed: n }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let m: [u8; 4] = self.take(4)?.try_into().unwrap();
        if m != expected {
            return Err(Error::BadMagic(m));
        }
        let v = self.u8()?;
        if v != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(v));
        }
        Ok(())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        if len == 0 {
            return Err(Error::InvalidName("empty name".into()));
        }
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::InvalidName("name is not UTF-8".into()))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn finish(&self) -> Result<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(Error::TrailingBytes(n)),
        }
    }
}
