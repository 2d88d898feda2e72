//! Closed-form MSE models of the shape-gain quantizer and the optimal split of
//! a per-subvector bit budget between shape and gain.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `E[h]` for `h = ||v||`, `v ~ N(0, I_L)`: `sqrt(2) Gamma((L+1)/2) / Gamma(L/2)`.
pub fn gain_mean(dim: usize) -> f64 {
    let l = dim as f64;
    std::f64::consts::SQRT_2 * (ln_gamma((l + 1.0) / 2.0) - ln_gamma(l / 2.0)).exp()
}

/// `beta(L/2, 1/2)`.
pub fn beta_half(dim: usize) -> f64 {
    let l = dim as f64;
    (ln_gamma(l / 2.0) + ln_gamma(0.5) - ln_gamma((l + 1.0) / 2.0)).exp()
}

/// `chi_L = 3^(L/2) Gamma^3((L+2)/6) / (2 Gamma(L/2))`, the high-rate constant of
/// the Lloyd-Max gain quantizer.
pub fn chi_constant(dim: usize) -> f64 {
    let l = dim as f64;
    (0.5 * l * 3f64.ln() + 3.0 * ln_gamma((l + 2.0) / 6.0) - 2f64.ln() - ln_gamma(l / 2.0)).exp()
}

/// Gain MSE when the gain is replaced by its mean: `L - 2 pi / beta^2(L/2, 1/2)`.
pub fn gain_mse_at_mean(dim: usize) -> f64 {
    let b = beta_half(dim);
    dim as f64 - 2.0 * std::f64::consts::PI / (b * b)
}

/// Modeled gain MSE for `gain_bits` bits.
pub fn gain_mse_model(dim: usize, gain_bits: u32) -> f64 {
    if gain_bits == 0 {
        gain_mse_at_mean(dim)
    } else {
        chi_constant(dim) * 2f64.powi(-2 * (gain_bits as i32 + 1))
    }
}

/// Upper bound on the shape MSE of an even Grassmannian codebook with `shape_bits`
/// bits (`2^(Q_s - 1)` lines). Zero for a one-dimensional shape, which the even
/// codebook `{+1, -1}` represents exactly.
pub fn shape_mse_upper(dim: usize, shape_bits: u32) -> f64 {
    if dim <= 1 {
        return 0.0;
    }
    let l = dim as f64;
    2f64.powf(-2.0 * (shape_bits as f64 - 1.0) / (l - 1.0) + 1.0)
}

/// Lower bound companion of [`shape_mse_upper`].
pub fn shape_mse_lower(dim: usize, shape_bits: u32) -> f64 {
    if dim <= 1 {
        return 0.0;
    }
    let l = dim as f64;
    let d2 = (l - 1.0) / (l + 1.0) * 2f64.powf(-2.0 * (shape_bits as f64 - 1.0) / (l - 1.0));
    2.0 - 2.0 * (1.0 - d2.min(1.0)).sqrt()
}

/// Modeled MSE `E||v - h^ s^||^2` of the shape-gain quantizer on `N(0, I_L)`:
/// `L * shape_mse_upper + gain_mse_model`.
pub fn shape_gain_mse_model(dim: usize, shape_bits: u32, gain_bits: u32) -> f64 {
    dim as f64 * shape_mse_upper(dim, shape_bits) + gain_mse_model(dim, gain_bits)
}

/// Result of the bit-allocation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitAllocation {
    pub dim: usize,
    pub bits_per_entry: f64,
    pub shape_bits: u32,
    pub gain_bits: u32,
    pub modeled_mse: f64,
    /// Continuous optimum of gain bits, `H_{L,Q}`.
    pub continuous_gain_bits: f64,
    /// Sign decides between the two continuous regimes; positive favours gain bits = 0.
    pub regime_gap: f64,
}

impl BitAllocation {
    pub fn total_bits(&self) -> u32 {
        self.shape_bits + self.gain_bits
    }
}

/// `H_{L,Q} = (L-1)/(2L) log2((L-1)/(2L) chi_L) + Q - 1`.
pub fn continuous_gain_bits(dim: usize, bits_per_entry: f64) -> f64 {
    let l = dim as f64;
    let c = (l - 1.0) / (2.0 * l);
    c * (c * chi_constant(dim)).log2() + bits_per_entry - 1.0
}

/// `F_{L,Q}`: modeled MSE of the continuous interior optimum `(QL - H, H)` minus
/// that of `(QL, 0)`.
pub fn regime_gap(dim: usize, bits_per_entry: f64) -> f64 {
    let l = dim as f64;
    let ql = bits_per_entry * l;
    let h = continuous_gain_bits(dim, bits_per_entry);
    let shape_at_budget = l * 2f64.powf(-2.0 * (ql - 1.0) / (l - 1.0) + 1.0);
    shape_at_budget * (2f64.powf(2.0 * h / (l - 1.0)) - 1.0) + chi_constant(dim) * 2f64.powf(-2.0 * (h + 1.0))
        - gain_mse_at_mean(dim)
}

/// Integer bit split minimizing the modeled MSE for a budget of `floor(Q L)` bits.
///
/// Every split `(Q_s, Q_h)` with `Q_s + Q_h = floor(QL)` and `Q_s >= 1` is scored
/// with [`shape_gain_mse_model`]; ties go to the larger `Q_s`.
pub fn optimal_bit_allocation(dim: usize, bits_per_entry: f64) -> Result<BitAllocation> {
    if dim == 0 {
        return Err(Error::InvalidArgument("subvector dimension must be >= 1".into()));
    }
    let budget = (bits_per_entry * dim as f64 + 1e-9).floor();
    if !(budget >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Q*L = {} leaves no bit for the shape codebook",
            bits_per_entry * dim as f64
        )));
    }
    let budget = budget as u32;
    if dim == 1 {
        // A 1-D shape is a sign; every extra bit goes to the gain.
        let gain_bits = budget - 1;
        return Ok(BitAllocation {
            dim,
            bits_per_entry,
            shape_bits: 1,
            gain_bits,
            modeled_mse: shape_gain_mse_model(1, 1, gain_bits),
            continuous_gain_bits: f64::NAN,
            regime_gap: f64::NAN,
        });
    }
    let mut best: Option<(u32, f64)> = None;
    for shape_bits in (1..=budget).rev() {
        let mse = shape_gain_mse_model(dim, shape_bits, budget - shape_bits);
        match best {
            Some((_, m)) if mse >= m => {}
            _ => best = Some((shape_bits, mse)),
        }
    }
    let (shape_bits, modeled_mse) = best.expect("budget >= 1");
    Ok(BitAllocation {
        dim,
        bits_per_entry,
        shape_bits,
        gain_bits: budget - shape_bits,
        modeled_mse,
        continuous_gain_bits: continuous_gain_bits(dim, bits_per_entry),
        regime_gap: regime_gap(dim, bits_per_entry),
    })
}
