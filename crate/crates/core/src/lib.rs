//! Communication-efficient federated learning with vector-quantized compressed
//! sensing.
//!
//! Devices sparsify their local block updates with error feedback, project them
//! with a shared Gaussian matrix, and quantize the projection with a shape-gain
//! quantizer designed for `N(0, I_L)` subvectors. The server aggregates the
//! dequantized projections group by group and recovers the aggregate with a
//! sparse-recovery algorithm.

pub mod compressor;
pub mod error;
pub mod experiments;
pub mod fl_sim;
pub mod linalg;
pub mod par;
pub mod param_opt;
pub mod quantizer;
pub mod reconstructor;
pub mod rng;

pub use error::{Error, Result};
