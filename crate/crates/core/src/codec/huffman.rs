//! Canonical Huffman coding over byte symbols.
//!
//! The code is fully described by 256 code lengths. Codes are assigned in
//! (length, symbol) order and written MSB-first; the final byte is padded
//! with zero bits.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Longest code the encoder will emit.
pub const MAX_CODE_LEN: u8 = 64;

const TABLE_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCodedPayload {
    /// Code length per symbol; 0 marks an absent symbol.
    pub code_lengths: [u8; 256],
    pub bitstream: Vec<u8>,
    pub symbol_count: u64,
}

impl HuffmanCodedPayload {
    /// Code lengths, symbol count (u64 LE), then the bitstream.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TABLE_BYTES + 8 + self.bitstream.len());
        out.extend_from_slice(&self.code_lengths);
        out.extend_from_slice(&self.symbol_count.to_le_bytes());
        out.extend_from_slice(&self.bitstream);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TABLE_BYTES + 8 {
            return Err(Error::Huffman(format!("payload of {} bytes is shorter than the code table", bytes.len())));
        }
        let mut code_lengths = [0u8; 256];
        code_lengths.copy_from_slice(&bytes[..TABLE_BYTES]);
        let symbol_count = u64::from_le_bytes(bytes[TABLE_BYTES..TABLE_BYTES + 8].try_into().unwrap());
        Ok(Self { code_lengths, bitstream: bytes[TABLE_BYTES + 8..].to_vec(), symbol_count })
    }

    /// Bits spent on symbols, excluding table and padding.
    pub fn payload_bits(&self, symbols: &[u8]) -> u64 {
        symbols.iter().map(|&s| self.code_lengths[s as usize] as u64).sum()
    }
}

fn code_lengths(freqs: &[u64; 256]) -> Result<[u8; 256]> {
    let mut lengths = [0u8; 256];
    let present: Vec<usize> = (0..256).filter(|&s| freqs[s] > 0).collect();
    match present.len() {
        0 => return Err(Error::Huffman("no symbols to encode".into())),
        1 => {
            lengths[present[0]] = 1;
            return Ok(lengths);
        }
        _ => {}
    }

    // Nodes 0..256 are leaves; merged nodes follow. Equal weights pop in
    // ascending id order, so leaves break ties by symbol value.
    let mut parent: Vec<usize> = vec![usize::MAX; 256];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = present.iter().map(|&s| Reverse((freqs[s], s))).collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    for &s in &present {
        let mut depth = 0usize;
        let mut node = s;
        while parent[node] != usize::MAX {
            node = parent[node];
            depth += 1;
        }
        if depth > MAX_CODE_LEN as usize {
            return Err(Error::Huffman(format!("code length {depth} exceeds {MAX_CODE_LEN}")));
        }
        lengths[s] = depth as u8;
    }
    Ok(lengths)
}

/// Canonical codes for each present symbol, after checking the Kraft inequality.
fn canonical_codes(lengths: &[u8; 256]) -> Result<[u64; 256]> {
    let mut kraft: u128 = 0;
    let mut any = false;
    for &l in lengths.iter() {
        if l > MAX_CODE_LEN {
            return Err(Error::Huffman(format!("code length {l} exceeds {MAX_CODE_LEN}")));
        }
        if l > 0 {
            any = true;
            kraft += 1u128 << (MAX_CODE_LEN - l);
        }
    }
    if !any {
        return Err(Error::Huffman("code table has no symbols".into()));
    }
    if kraft > 1u128 << MAX_CODE_LEN {
        return Err(Error::Huffman("code lengths violate the Kraft inequality".into()));
    }
    let mut order: Vec<usize> = (0..256).filter(|&s| lengths[s] > 0).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = [0u64; 256];
    let mut code: u128 = 0;
    let mut prev_len = lengths[order[0]];
    for &s in &order {
        let l = lengths[s];
        code <<= l - prev_len;
        prev_len = l;
        codes[s] = code as u64;
        code += 1;
    }
    Ok(codes)
}

struct BitWriter {
    bytes: Vec<u8>,
    used: u8,
}

impl BitWriter {
    fn write(&mut self, code: u64, len: u8) {
        for i in (0..len).rev() {
            if self.used == 0 {
                self.bytes.push(0);
            }
            let bit = ((code >> i) & 1) as u8;
            *self.bytes.last_mut().unwrap() |= bit << (7 - self.used);
            self.used = (self.used + 1) % 8;
        }
    }
}

pub fn huffman_encode(symbols: &[u8]) -> Result<HuffmanCodedPayload> {
    if symbols.is_empty() {
        return Err(Error::Huffman("cannot encode an empty symbol stream".into()));
    }
    let mut freqs = [0u64; 256];
    for &s in symbols {
        freqs[s as usize] += 1;
    }
    let code_lengths = code_lengths(&freqs)?;
    let codes = canonical_codes(&code_lengths)?;
    let mut writer = BitWriter { bytes: Vec::new(), used: 0 };
    for &s in symbols {
        writer.write(codes[s as usize], code_lengths[s as usize]);
    }
    Ok(HuffmanCodedPayload { code_lengths, bitstream: writer.bytes, symbol_count: symbols.len() as u64 })
}

pub fn huffman_decode(payload: &HuffmanCodedPayload) -> Result<Vec<u8>> {
    let lengths = &payload.code_lengths;
    canonical_codes(lengths)?;

    // Per length: first canonical code and the offset of its symbols in `sorted`.
    let max_len = *lengths.iter().max().unwrap() as usize;
    let mut count = vec![0u64; max_len + 1];
    for &l in lengths.iter().filter(|&&l| l > 0) {
        count[l as usize] += 1;
    }
    let mut sorted: Vec<u8> = (0..=255u8).filter(|&s| lengths[s as usize] > 0).collect();
    sorted.sort_by_key(|&s| (lengths[s as usize], s));
    let mut first = vec![0u128; max_len + 1];
    // Same recurrence as the encoder: first code of length l follows the last of length l-1.
    let mut offset = vec![0u64; max_len + 1];
    let mut code: u128 = 0;
    let mut seen: u64 = 0;
    for l in 1..=max_len {
        code = (code + count[l - 1] as u128) << 1;
        first[l] = code;
        offset[l] = seen;
        seen += count[l];
    }

    let total_bits = payload.bitstream.len() as u64 * 8;
    let mut pos: u64 = 0;
    let mut out = Vec::with_capacity(payload.symbol_count.min(1 << 24) as usize);
    for _ in 0..payload.symbol_count {
        let mut code: u128 = 0;
        let mut len = 0usize;
        loop {
            if pos >= total_bits {
                return Err(Error::Huffman("bitstream ended before all symbols were decoded".into()));
            }
            let byte = payload.bitstream[(pos / 8) as usize];
            let bit = (byte >> (7 - (pos % 8))) & 1;
            pos += 1;
            code = (code << 1) | bit as u128;
            len += 1;
            if len > max_len {
                return Err(Error::Huffman(format!("no code matches bit pattern ending at bit {pos}")));
            }
            if code >= first[len] && code - first[len] < count[len] as u128 {
                let k = offset[len] + (code - first[len]) as u64;
                out.push(sorted[k as usize]);
                break;
            }
        }
    }
    if total_bits - pos >= 8 {
        return Err(Error::Huffman(format!("{} unused bytes after the last symbol", (total_bits - pos) / 8)));
    }
    if pos < total_bits {
        let last = payload.bitstream[payload.bitstream.len() - 1];
        let pad_mask = (1u16 << (total_bits - pos)) as u8 - 1;
        if last & pad_mask != 0 {
            return Err(Error::Huffman("non-zero padding bits".into()));
        }
    }
    Ok(out)
}
