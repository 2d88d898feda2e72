//! Bit-exact wire format of compressed blocks.
//!
//! A block payload is `alpha` as little-endian binary32 followed by `P`
//! contiguous `(shape: Q_s bits, gain: Q_h bits)` fields, MSB-first within each
//! byte, with the final byte zero-padded.

use crate::error::{Error, Result};
use crate::quantizer::CodePair;

pub const ROUND_MAGIC: &[u8; 4] = b"FVQC";
pub const ROUND_VERSION: u16 = 1;
pub const ROUND_HEADER_LEN: usize = 16;
/// Largest code width a field may use.
pub const MAX_FIELD_BITS: u8 = 32;

/// Scaling factor plus codeword indices of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlockPayload {
    pub alpha: f32,
    pub codes: Vec<CodePair>,
}

impl CompressedBlockPayload {
    /// The "contributes nothing" payload for an all-zero sparse block.
    pub fn zero(p: usize) -> Self {
        Self { alpha: 0.0, codes: vec![CodePair::default(); p] }
    }

    pub fn is_zero_sentinel(&self) -> bool {
        self.alpha.to_bits() == 0
    }
}

/// `32 + P (Q_s + Q_h)`.
pub fn payload_bits(p: usize, shape_bits: u32, gain_bits: u32) -> u64 {
    32 + p as u64 * u64::from(shape_bits + gain_bits)
}

pub fn payload_bytes(p: usize, shape_bits: u32, gain_bits: u32) -> usize {
    payload_bits(p, shape_bits, gain_bits).div_ceil(8) as usize
}

#[derive(Debug, Default)]
struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn push(&mut self, value: u32, bits: u32) {
        if bits == 0 {
            return;
        }
        self.acc = (self.acc << bits) | u64::from(value);
        self.filled += bits;
        while self.filled >= 8 {
            self.filled -= 8;
            self.out.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn take(&mut self, bits: u32) -> u32 {
        let mut v = 0u32;
        for _ in 0..bits {
            let byte = self.bytes[self.pos / 8];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | u32::from(bit);
            self.pos += 1;
        }
        v
    }
}

fn check_width(value: u32, bits: u32) -> Result<()> {
    if bits > u32::from(MAX_FIELD_BITS) {
        return Err(Error::InvalidArgument(format!("field width {bits} exceeds {MAX_FIELD_BITS}")));
    }
    if bits < 32 && value >> bits != 0 {
        return Err(Error::CodeOverflow { value, bits: bits as u8 });
    }
    Ok(())
}

pub fn encode_payload(alpha: f32, codes: &[CodePair], shape_bits: u32, gain_bits: u32) -> Result<Vec<u8>> {
    let mut w = BitWriter::default();
    w.out.reserve(payload_bytes(codes.len(), shape_bits, gain_bits));
    w.out.extend_from_slice(&alpha.to_le_bytes());
    for c in codes {
        check_width(c.shape, shape_bits)?;
        check_width(c.gain, gain_bits)?;
        w.push(c.shape, shape_bits);
        w.push(c.gain, gain_bits);
    }
    Ok(w.finish())
}

pub fn decode_payload(bytes: &[u8], p: usize, shape_bits: u32, gain_bits: u32) -> Result<CompressedBlockPayload> {
    let needed = payload_bytes(p, shape_bits, gain_bits);
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, got: bytes.len() });
    }
    check_width(0, shape_bits)?;
    check_width(0, gain_bits)?;
    let alpha = f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
    let mut r = BitReader { bytes: &bytes[4..needed], pos: 0 };
    let codes = (0..p).map(|_| CodePair { shape: r.take(shape_bits), gain: r.take(gain_bits) }).collect();
    Ok(CompressedBlockPayload { alpha, codes })
}

/// Header of a device's per-round message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundHeader {
    pub blocks: u16,
    pub subvectors: u32,
    pub shape_bits: u8,
    pub gain_bits: u8,
}

/// Concatenates `B` block payloads that share `(P, Q_s, Q_h)` behind a 16-byte header.
pub fn encode_round_message(blocks: &[CompressedBlockPayload], shape_bits: u32, gain_bits: u32) -> Result<Vec<u8>> {
    let p = blocks.first().map_or(0, |b| b.codes.len());
    if blocks.iter().any(|b| b.codes.len() != p) {
        return Err(Error::GroupMismatch("round message blocks differ in subvector count".into()));
    }
    let b = u16::try_from(blocks.len()).map_err(|_| Error::InvalidArgument("too many blocks".into()))?;
    let p32 = u32::try_from(p).map_err(|_| Error::InvalidArgument("too many subvectors".into()))?;
    let (qs, qh) = (
        u8::try_from(shape_bits).map_err(|_| Error::InvalidArgument("shape bits".into()))?,
        u8::try_from(gain_bits).map_err(|_| Error::InvalidArgument("gain bits".into()))?,
    );
    let mut out = Vec::with_capacity(ROUND_HEADER_LEN + blocks.len() * payload_bytes(p, shape_bits, gain_bits));
    out.extend_from_slice(ROUND_MAGIC);
    out.extend_from_slice(&ROUND_VERSION.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out.extend_from_slice(&p32.to_le_bytes());
    out.push(qs);
    out.push(qh);
    out.extend_from_slice(&0u16.to_le_bytes());
    for blk in blocks {
        out.extend(encode_payload(blk.alpha, &blk.codes, shape_bits, gain_bits)?);
    }
    Ok(out)
}

pub fn decode_round_message(bytes: &[u8]) -> Result<(RoundHeader, Vec<CompressedBlockPayload>)> {
    if bytes.len() < ROUND_HEADER_LEN {
        return Err(Error::Truncated { needed: ROUND_HEADER_LEN, got: bytes.len() });
    }
    if &bytes[..4] != ROUND_MAGIC {
        return Err(Error::BadHeader("missing FVQC magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != ROUND_VERSION {
        return Err(Error::BadHeader(format!("unsupported round message version {version}")));
    }
    let header = RoundHeader {
        blocks: u16::from_le_bytes([bytes[6], bytes[7]]),
        subvectors: u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")),
        shape_bits: bytes[12],
        gain_bits: bytes[13],
    };
    let (p, qs, qh) = (header.subvectors as usize, u32::from(header.shape_bits), u32::from(header.gain_bits));
    let stride = payload_bytes(p, qs, qh);
    let needed = ROUND_HEADER_LEN + stride * header.blocks as usize;
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, got: bytes.len() });
    }
    let blocks = (0..header.blocks as usize)
        .map(|i| decode_payload(&bytes[ROUND_HEADER_LEN + i * stride..], p, qs, qh))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, blocks))
}
