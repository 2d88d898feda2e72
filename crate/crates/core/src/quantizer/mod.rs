//! Shape-gain vector quantization of `N(0, I_L)` subvectors.

mod cache;
mod gain;
mod model;
mod shape;
mod vq;

pub use cache::{decode_gain, decode_shape, encode_gain, encode_shape, CodebookBank, FORMAT_VERSION, MAGIC};
pub use gain::{build_gain_codebook, integrate_mass_and_moment, GainCodebook, GainDensity, MAX_GAIN_BITS};
pub use model::{
    beta_half, chi_constant, continuous_gain_bits, gain_mean, gain_mse_at_mean, gain_mse_model, optimal_bit_allocation,
    regime_gap, shape_gain_mse_model, shape_mse_lower, shape_mse_upper, BitAllocation,
};
pub use shape::{
    build_shape_codebook, chordal_distance, min_chordal_distance, PackingBudget, ShapeCodebook, Sign, MAX_LINES_LOG2,
};
pub use vq::{CodePair, ShapeGainQuantizer};
