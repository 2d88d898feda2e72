use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::MatRef;

/// Least squares on a known support: `argmin ||y - A_T z||^2`, zero off `T`.
pub fn oracle_ls_recover(a: MatRef<'_>, y: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    let n = a.cols();
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch { expected: a.rows(), got: y.len() });
    }
    let mut out = vec![0.0; n];
    if support.is_empty() {
        return Ok(out);
    }
    if support.len() > a.rows() {
        return Err(Error::RankDeficient { support: support.len(), rows: a.rows() });
    }
    let z = solve_on_support(a, y, support)?;
    for (&j, v) in support.iter().zip(z) {
        out[j] = v;
    }
    Ok(out)
}

/// Coefficients of the least-squares fit on `support`, in support order.
pub(crate) fn solve_on_support(a: MatRef<'_>, y: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    let sub = a.select_columns(support);
    let at = DMatrix::from_row_slice(sub.rows(), sub.cols(), &sub.view().to_f64());
    let qr = at.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..support.len()).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let tol = max * f64::EPSILON * a.rows().max(support.len()) as f64;
    if max == 0.0 || diag.iter().any(|&d| d <= tol) {
        return Err(Error::RankDeficient { support: support.len(), rows: a.rows() });
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let z = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient { support: support.len(), rows: a.rows() })?;
    Ok(z.iter().copied().collect())
}

/// Per-device inputs of the reconstruction-error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerm {
    /// `||g_bar_k - g_tilde_k||^2`
    pub truncation_energy: f64,
    pub sparsity: usize,
    pub ratio: f64,
    pub alpha: f64,
    pub weight: f64,
    pub modeled_mse: f64,
    pub dim: usize,
}

/// `K' sum_k rho_k^2 { ||g_bar_k - g_tilde_k||^2 + K' S_k R_k sigma^2_k / (N L_k alpha_k^2) }`.
///
/// Devices with `alpha = 0` (empty blocks) contribute only their truncation energy.
pub fn recovery_error_bound(terms: &[BoundTerm], n: usize, cap: usize) -> f64 {
    let k = cap as f64;
    k * terms
        .iter()
        .map(|t| {
            let quant = if t.alpha == 0.0 {
                0.0
            } else {
                k * t.sparsity as f64 * t.ratio * t.modeled_mse / (n as f64 * t.dim as f64 * t.alpha * t.alpha)
            };
            t.weight * t.weight * (t.truncation_energy + quant)
        })
        .sum::<f64>()
}
