use std::sync::Arc;

use super::gain::GainCodebook;
use super::shape::{ShapeCodebook, Sign};
use crate::error::{Error, Result};
use crate::linalg::norm;

/// Shape-gain vector quantizer built from a shape and a gain codebook of the same dimension.
#[derive(Debug, Clone)]
pub struct ShapeGainQuantizer {
    shape: Arc<ShapeCodebook>,
    gain: Arc<GainCodebook>,
}

/// Codeword indices of one quantized subvector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CodePair {
    /// `line_index * 2 + (sign < 0)`; occupies `Q_s` bits.
    pub shape: u32,
    /// Gain level index; occupies `Q_h` bits.
    pub gain: u32,
}

impl CodePair {
    pub fn pack_shape(index: usize, sign: Sign) -> u32 {
        (index as u32) << 1 | u32::from(sign == Sign::Minus)
    }

    pub fn shape_parts(self) -> (usize, Sign) {
        let sign = if self.shape & 1 == 1 { Sign::Minus } else { Sign::Plus };
        ((self.shape >> 1) as usize, sign)
    }
}

impl ShapeGainQuantizer {
    pub fn new(shape: Arc<ShapeCodebook>, gain: Arc<GainCodebook>) -> Result<Self> {
        if shape.dim() != gain.dim() {
            return Err(Error::DimensionMismatch { expected: shape.dim(), got: gain.dim() });
        }
        Ok(Self { shape, gain })
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn shape_bits(&self) -> u32 {
        self.shape.bits()
    }

    pub fn gain_bits(&self) -> u32 {
        self.gain.bits()
    }

    pub fn shape_codebook(&self) -> &ShapeCodebook {
        &self.shape
    }

    pub fn gain_codebook(&self) -> &GainCodebook {
        &self.gain
    }

    pub fn encode(&self, v: &[f64]) -> Result<CodePair> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        let h = norm(v);
        if h == 0.0 {
            return Err(Error::ZeroVector);
        }
        let (index, sign) = self.shape.nearest(v);
        let gain = self.gain.quantize(h)? as u32;
        Ok(CodePair { shape: CodePair::pack_shape(index, sign), gain })
    }

    /// `h^ * s^` for a code pair.
    pub fn decode_into(&self, code: CodePair, out: &mut [f64]) {
        let (index, sign) = code.shape_parts();
        self.shape.decode_into(index, sign, out);
        let h = self.gain.level(code.gain as usize);
        out.iter_mut().for_each(|x| *x *= h);
    }

    pub fn decode(&self, code: CodePair) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.decode_into(code, &mut out);
        out
    }

    /// Validates that a code pair addresses existing codewords.
    pub fn check(&self, code: CodePair) -> Result<()> {
        let (index, _) = code.shape_parts();
        if index >= self.shape.len() {
            return Err(Error::CodeOverflow { value: code.shape, bits: self.shape_bits() as u8 });
        }
        if code.gain as usize >= self.gain.levels().len() {
            return Err(Error::CodeOverflow { value: code.gain, bits: self.gain_bits() as u8 });
        }
        Ok(())
    }
}
