//! Device-side block compression.

mod block;
mod payload;
mod projection;
mod sparsify;

pub use block::{
    compress_accumulated, compress_block, dequantize_projection, project, quantize_projection, CompressedBlock,
    CompressionParams,
};
pub use payload::{
    decode_payload, decode_round_message, encode_payload, encode_round_message, payload_bits, payload_bytes,
    CompressedBlockPayload, RoundHeader, ROUND_HEADER_LEN, ROUND_MAGIC, ROUND_VERSION,
};
pub use projection::{fill_projection_row, projection_rows, ProjectionBank, Sensing};
pub use sparsify::{
    sparsify, sparsify_with_feedback, top_s_indices, truncation_energy_profile, ResidualState, Sparsified,
};
