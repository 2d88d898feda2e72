use serde::{Deserialize, Serialize};

use super::payload::{payload_bits, CompressedBlockPayload};
use super::sparsify::{ResidualState, Sparsified};
use crate::error::{Error, Result};
use crate::linalg::{norm_sq, MatRef};
use crate::quantizer::{CodePair, ShapeGainQuantizer};

/// Per-(device, block, round) compression parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionParams {
    /// Link capacity `C` in bits per model entry.
    pub capacity: f64,
    /// Dimensionality-reduction ratio `R`.
    pub ratio: f64,
    /// Bits per projected entry `Q = C R`.
    pub bits_per_entry: f64,
    pub sparsity: usize,
    pub rows: usize,
    pub dim: usize,
    pub subvectors: usize,
    pub shape_bits: u32,
    pub gain_bits: u32,
}

impl CompressionParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 || !self.rows.is_multiple_of(self.dim) || self.subvectors * self.dim != self.rows {
            return bad(format!("M={} must equal P={} times L={}", self.rows, self.subvectors, self.dim));
        }
        if self.rows == 0 || self.rows > n {
            return Err(Error::ProjectionTooTall { rows: self.rows, cols: n });
        }
        if self.sparsity == 0 || self.sparsity > n {
            return Err(Error::SparsityTooLarge { sparsity: self.sparsity, len: n });
        }
        if self.shape_bits == 0 {
            return bad("Q_s must be >= 1".into());
        }
        let budget = (self.bits_per_entry * self.dim as f64 + 1e-9).floor() as u64;
        if u64::from(self.shape_bits + self.gain_bits) > budget {
            return bad(format!("Q_s + Q_h = {} exceeds floor(Q L) = {budget}", self.shape_bits + self.gain_bits));
        }
        Ok(())
    }

    /// Bits on the wire for one block: `32 + P (Q_s + Q_h)`.
    pub fn payload_bits(&self) -> u64 {
        payload_bits(self.subvectors, self.shape_bits, self.gain_bits)
    }
}

/// `x = alpha A g_tilde` with `alpha = 1 / ||g_tilde||` rounded to binary32.
///
/// The rounded `alpha` is what both ends see, so it is also the one applied here.
/// An all-zero input yields `x = 0` and the `+0.0` sentinel.
pub fn project(nonzeros: &[(usize, f64)], a: MatRef<'_>) -> (Vec<f64>, f32) {
    let energy: f64 = nonzeros.iter().map(|&(_, v)| v * v).sum();
    if energy == 0.0 {
        return (vec![0.0; a.rows()], 0.0);
    }
    let alpha = (1.0 / energy.sqrt()) as f32;
    let mut x = a.mul_sparse(nonzeros);
    let s = f64::from(alpha);
    x.iter_mut().for_each(|v| *v *= s);
    (x, alpha)
}

/// Splits `x` into length-`L` subvectors and vector-quantizes each.
pub fn quantize_projection(x: &[f64], q: &ShapeGainQuantizer) -> Result<Vec<CodePair>> {
    let l = q.dim();
    if !x.len().is_multiple_of(l) {
        return Err(Error::DimensionMismatch { expected: x.len() / l * l, got: x.len() });
    }
    x.chunks_exact(l).map(|v| if norm_sq(v) == 0.0 { Ok(CodePair::default()) } else { q.encode(v) }).collect()
}

/// Inverse of [`quantize_projection`]: the dequantized projection `x_hat`.
pub fn dequantize_projection(codes: &[CodePair], q: &ShapeGainQuantizer) -> Result<Vec<f64>> {
    let l = q.dim();
    let mut out = vec![0.0; codes.len() * l];
    for (c, chunk) in codes.iter().zip(out.chunks_exact_mut(l)) {
        q.check(*c)?;
        q.decode_into(*c, chunk);
    }
    Ok(out)
}

/// Everything a device produces for one block.
#[derive(Debug, Clone)]
pub struct CompressedBlock {
    pub payload: CompressedBlockPayload,
    pub sparsified: Sparsified,
    /// `||g_bar - g_tilde||^2`
    pub truncation_energy: f64,
}

fn check_shape(params: &CompressionParams, q: &ShapeGainQuantizer, a: MatRef<'_>, n: usize) -> Result<()> {
    params.validate(n)?;
    if q.dim() != params.dim || q.shape_bits() != params.shape_bits || q.gain_bits() != params.gain_bits {
        return Err(Error::GroupMismatch("quantizer does not match compression parameters".into()));
    }
    if a.rows() != params.rows || a.cols() != n {
        return Err(Error::DimensionMismatch { expected: params.rows * n, got: a.rows() * a.cols() });
    }
    Ok(())
}

/// Sparsifies `accumulated = g + Delta_prev`, updates the residual, projects and quantizes.
pub fn compress_accumulated(
    accumulated: Vec<f64>,
    residual: &mut ResidualState,
    params: &CompressionParams,
    q: &ShapeGainQuantizer,
    a: MatRef<'_>,
) -> Result<CompressedBlock> {
    check_shape(params, q, a, accumulated.len())?;
    let sparsified = residual.commit(accumulated, params.sparsity)?;
    let truncation_energy = norm_sq(residual.delta());
    let (x, alpha) = project(&sparsified.nonzeros(), a);
    let payload = if alpha == 0.0 {
        CompressedBlockPayload::zero(params.subvectors)
    } else {
        CompressedBlockPayload { alpha, codes: quantize_projection(&x, q)? }
    };
    Ok(CompressedBlock { payload, sparsified, truncation_energy })
}

/// One block of the device-side pipeline: error-feedback sparsification,
/// projection with norm scaling and subvector quantization.
pub fn compress_block(
    g: &[f64],
    residual: &mut ResidualState,
    params: &CompressionParams,
    q: &ShapeGainQuantizer,
    a: MatRef<'_>,
) -> Result<CompressedBlock> {
    let acc = residual.accumulate(g)?;
    compress_accumulated(acc, residual, params, q, a)
}
