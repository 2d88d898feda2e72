//! Codebook persistence and a process-wide bank of built codebooks.
//!
//! File layout (all little-endian): magic `SGVQ`, version `u16`, `L u16`,
//! bits `u16`, then `f64` payload. Shape files hold `2^(bits-1) * L` line
//! coordinates followed by the achieved minimum chordal distance; gain files
//! hold `2^bits` levels followed by `2^bits - 1` boundaries.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use super::gain::{build_gain_codebook, GainCodebook};
use super::shape::{build_shape_codebook, PackingBudget, ShapeCodebook, MAX_LINES_LOG2};
use super::vq::ShapeGainQuantizer;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGVQ";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 10;

fn header(dim: usize, bits: u32) -> Result<Vec<u8>> {
    let dim = u16::try_from(dim).map_err(|_| Error::InvalidArgument(format!("dim {dim} exceeds u16")))?;
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(bits as u16).to_le_bytes());
    Ok(out)
}

fn parse_header(bytes: &[u8]) -> Result<(usize, u32)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { needed: HEADER_LEN, got: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadHeader("missing SGVQ magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::BadHeader(format!("unsupported codebook version {version}")));
    }
    let dim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let bits = u16::from_le_bytes([bytes[8], bytes[9]]) as u32;
    Ok((dim, bits))
}

fn read_f64s(bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    let needed = count * 8;
    if bytes.len() < needed {
        return Err(Error::Truncated { needed: needed + HEADER_LEN, got: bytes.len() + HEADER_LEN });
    }
    Ok(bytes[..needed].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn encode_shape(cb: &ShapeCodebook) -> Result<Vec<u8>> {
    let mut out = header(cb.dim(), cb.bits())?;
    for x in cb.lines_flat() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&cb.achieved_min_chordal().to_le_bytes());
    Ok(out)
}

pub fn decode_shape(bytes: &[u8]) -> Result<ShapeCodebook> {
    let (dim, bits) = parse_header(bytes)?;
    if dim == 0 || bits == 0 || bits - 1 > MAX_LINES_LOG2 {
        return Err(Error::BadHeader(format!("invalid shape header L={dim} bits={bits}")));
    }
    let n = (1usize << (bits - 1)) * dim;
    let data = read_f64s(&bytes[HEADER_LEN..], n + 1)?;
    let min_chordal = data[n];
    let mut lines = data;
    lines.truncate(n);
    Ok(ShapeCodebook::from_raw_parts(dim, bits, lines, min_chordal))
}

pub fn encode_gain(cb: &GainCodebook) -> Result<Vec<u8>> {
    let mut out = header(cb.dim(), cb.bits())?;
    for x in cb.levels().iter().chain(cb.boundaries()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_gain(bytes: &[u8]) -> Result<GainCodebook> {
    let (dim, bits) = parse_header(bytes)?;
    if dim == 0 || bits > super::gain::MAX_GAIN_BITS {
        return Err(Error::BadHeader(format!("invalid gain header L={dim} bits={bits}")));
    }
    let n = 1usize << bits;
    let data = read_f64s(&bytes[HEADER_LEN..], 2 * n - 1)?;
    Ok(GainCodebook::from_raw_parts(dim, bits, data[..n].to_vec(), data[n..].to_vec()))
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

type Slot<T> = Arc<OnceLock<std::result::Result<Arc<T>, Error>>>;

/// Builds each codebook at most once per process and optionally persists them.
///
/// Shape codebooks are keyed by `(L, Q_s)`; the packing seed and budget are
/// fixed for the bank so every device and the server derive identical codebooks.
#[derive(Debug)]
pub struct CodebookBank {
    dir: Option<PathBuf>,
    seed: u64,
    budget: PackingBudget,
    shapes: Mutex<HashMap<(usize, u32), Slot<ShapeCodebook>>>,
    gains: Mutex<HashMap<(usize, u32), Slot<GainCodebook>>>,
}

impl CodebookBank {
    pub fn new(dir: Option<PathBuf>, seed: u64, budget: PackingBudget) -> Self {
        Self { dir, seed, budget, shapes: Mutex::default(), gains: Mutex::default() }
    }

    /// In-memory bank with the default packing budget.
    pub fn in_memory(seed: u64) -> Self {
        Self::new(None, seed, PackingBudget::default())
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn shape_path(&self, dim: usize, bits: u32) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| {
            d.join(format!(
                "shape_L{dim}_Q{bits}_v{FORMAT_VERSION}_s{:x}_r{}_i{}.sgvq",
                self.seed, self.budget.restarts, self.budget.iterations
            ))
        })
    }

    fn gain_path(&self, dim: usize, bits: u32) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("gain_L{dim}_Q{bits}_v{FORMAT_VERSION}.sgvq")))
    }

    pub fn shape(&self, dim: usize, bits: u32) -> Result<Arc<ShapeCodebook>> {
        let slot = {
            let mut map = self.shapes.lock().expect("codebook bank poisoned");
            map.entry((dim, bits)).or_default().clone()
        };
        slot.get_or_init(|| {
            let path = self.shape_path(dim, bits);
            if let Some(p) = &path {
                if let Ok(bytes) = fs::read(p) {
                    if let Ok(cb) = decode_shape(&bytes) {
                        if cb.dim() == dim && cb.bits() == bits {
                            return Ok(Arc::new(cb));
                        }
                    }
                }
            }
            let cb = build_shape_codebook(dim, bits, self.seed, self.budget)?;
            if let Some(p) = &path {
                write_atomically(p, &encode_shape(&cb)?)?;
            }
            Ok(Arc::new(cb))
        })
        .clone()
    }

    pub fn gain(&self, dim: usize, bits: u32) -> Result<Arc<GainCodebook>> {
        let slot = {
            let mut map = self.gains.lock().expect("codebook bank poisoned");
            map.entry((dim, bits)).or_default().clone()
        };
        slot.get_or_init(|| {
            let path = self.gain_path(dim, bits);
            if let Some(p) = &path {
                if let Ok(bytes) = fs::read(p) {
                    if let Ok(cb) = decode_gain(&bytes) {
                        if cb.dim() == dim && cb.bits() == bits {
                            return Ok(Arc::new(cb));
                        }
                    }
                }
            }
            let cb = build_gain_codebook(dim, bits)?;
            if let Some(p) = &path {
                write_atomically(p, &encode_gain(&cb)?)?;
            }
            Ok(Arc::new(cb))
        })
        .clone()
    }

    pub fn quantizer(&self, dim: usize, shape_bits: u32, gain_bits: u32) -> Result<ShapeGainQuantizer> {
        ShapeGainQuantizer::new(self.shape(dim, shape_bits)?, self.gain(dim, gain_bits)?)
    }
}
