use fedvqcs::compressor::{
    compress_block, decode_payload, decode_round_message, encode_payload, encode_round_message, payload_bits,
    payload_bytes, project, projection_rows, sparsify, sparsify_with_feedback, top_s_indices,
    truncation_energy_profile, CompressedBlockPayload, CompressionParams, ResidualState,
};
use fedvqcs::quantizer::{CodePair, CodebookBank};
use proptest::prelude::*;

// Sort-based reference: stable sort by descending magnitude keeps lower
// indices first on ties.
fn top_s_oracle(v: &[f64], s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*b].abs().total_cmp(&v[*a].abs()));
    let mut keep: Vec<usize> = idx.into_iter().take(s).collect();
    keep.sort_unstable();
    keep
}

fn codes_strategy(p: usize, qs: u32, qh: u32) -> impl Strategy<Value = Vec<CodePair>> {
    let shape_max = if qs == 32 { u32::MAX } else { (1u32 << qs) - 1 };
    let gain_max = if qh == 0 { 0 } else { (1u32 << qh) - 1 };
    prop::collection::vec((0..=shape_max, 0..=gain_max).prop_map(|(shape, gain)| CodePair { shape, gain }), p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_s_matches_sort(v in prop::collection::vec(-10i32..10, 1..60), s in 0usize..70) {
        // small integers force plenty of magnitude ties
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        prop_assert_eq!(top_s_indices(&v, s), top_s_oracle(&v, s.min(v.len())));
    }

    #[test]
    fn error_feedback_is_bitwise_exact(
        g in prop::collection::vec(-5.0f64..5.0, 40),
        prev in prop::collection::vec(-1.0f64..1.0, 40),
        s in 1usize..40,
    ) {
        let (sparse, residual) = sparsify_with_feedback(&g, &prev, s).unwrap();
        for j in 0..40 {
            let acc = g[j] + prev[j];
            // exactly one of the two holds the accumulated value
            prop_assert!(
                (sparse[j] == acc && residual[j] == 0.0) || (sparse[j] == 0.0 && residual[j] == acc)
            );
        }
        prop_assert!(sparse.iter().filter(|x| **x != 0.0).count() <= s);
    }

    #[test]
    fn truncation_profile_matches_direct(v in prop::collection::vec(-3.0f64..3.0, 1..30)) {
        let profile = truncation_energy_profile(&v);
        for s in 0..=v.len() {
            let kept = sparsify(&v, s);
            let direct: f64 = v.iter().zip(&kept).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!((profile[s] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn payload_roundtrip(
        (qs, qh, codes) in (1u32..12, 0u32..6, 1usize..20)
            .prop_flat_map(|(qs, qh, p)| (Just(qs), Just(qh), codes_strategy(p, qs, qh))),
        alpha in 1e-6f32..1e3,
    ) {
        let bytes = encode_payload(alpha, &codes, qs, qh).unwrap();
        prop_assert_eq!(bytes.len(), payload_bytes(codes.len(), qs, qh));
        prop_assert_eq!(payload_bits(codes.len(), qs, qh), 32 + codes.len() as u64 * u64::from(qs + qh));
        let back = decode_payload(&bytes, codes.len(), qs, qh).unwrap();
        prop_assert_eq!(back.alpha.to_bits(), alpha.to_bits());
        prop_assert_eq!(back.codes, codes);
    }
}

#[test]
fn round_message_roundtrip() {
    let blocks = vec![
        CompressedBlockPayload { alpha: 0.25, codes: vec![CodePair { shape: 5, gain: 1 }; 3] },
        CompressedBlockPayload::zero(3),
    ];
    let bytes = encode_round_message(&blocks, 4, 2).unwrap();
    let (header, back) = decode_round_message(&bytes).unwrap();
    assert_eq!(back, blocks);
    assert!(back[1].is_zero_sentinel());
    assert_eq!((header.blocks, header.subvectors, header.shape_bits, header.gain_bits), (2, 3, 4, 2));
}

#[test]
fn truncated_payload_is_rejected() {
    let codes = vec![CodePair { shape: 3, gain: 1 }; 4];
    let bytes = encode_payload(1.0, &codes, 3, 2).unwrap();
    assert!(decode_payload(&bytes[..bytes.len() - 1], 4, 3, 2).is_err());
}

#[test]
fn projection_prefix_and_determinism() {
    let big = projection_rows(11, 0, 3, 30, 50).unwrap();
    let small = projection_rows(11, 0, 3, 12, 50).unwrap();
    assert_eq!(small.as_slice(), &big.as_slice()[..12 * 50]);
    assert_eq!(projection_rows(11, 0, 3, 30, 50).unwrap().as_slice(), big.as_slice());
    assert_ne!(projection_rows(11, 0, 4, 30, 50).unwrap().as_slice(), big.as_slice());
    assert_ne!(projection_rows(11, 1, 3, 30, 50).unwrap().as_slice(), big.as_slice());
    assert!(projection_rows(11, 0, 0, 51, 50).is_err());
}

#[test]
fn projection_entries_are_standard_normal() {
    let a = projection_rows(5, 0, 0, 200, 200).unwrap();
    let n = a.as_slice().len() as f64;
    let mean = a.as_slice().iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = a.as_slice().iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");
}

#[test]
fn projection_is_norm_scaled() {
    let a = projection_rows(2, 0, 0, 8, 20).unwrap();
    let nz = vec![(1, 3.0), (7, -4.0)];
    let (x, alpha) = project(&nz, a.view());
    assert_eq!(alpha, 0.2f32);
    for (r, xr) in x.iter().enumerate() {
        let expect = f64::from(alpha) * (3.0 * a.get(r, 1) - 4.0 * a.get(r, 7));
        assert!((xr - expect).abs() < 1e-12);
    }
    let (zero, a0) = project(&[], a.view());
    assert_eq!(a0.to_bits(), 0);
    assert!(zero.iter().all(|v| *v == 0.0));
}

#[test]
fn compress_block_carries_residual_across_calls() {
    let n = 32;
    let params = CompressionParams {
        capacity: 1.0,
        ratio: 2.0,
        bits_per_entry: 2.0,
        sparsity: 3,
        rows: 16,
        dim: 4,
        subvectors: 4,
        shape_bits: 6,
        gain_bits: 2,
    };
    let q = CodebookBank::in_memory(3).quantizer(4, 6, 2).unwrap();
    let a = projection_rows(9, 0, 0, 16, n).unwrap();
    let mut residual = ResidualState::new(n);
    let g1: Vec<f64> = (0..n).map(|j| ((j * 7) % 11) as f64 - 5.0).collect();
    let out1 = compress_block(&g1, &mut residual, &params, &q, a.view()).unwrap();
    assert_eq!(out1.sparsified.support.len(), 3);
    let first_delta = residual.delta().to_vec();
    let g2 = vec![0.5; n];
    let out2 = compress_block(&g2, &mut residual, &params, &q, a.view()).unwrap();
    for j in 0..n {
        assert_eq!(out2.sparsified.accumulated[j], g2[j] + first_delta[j]);
        assert_eq!(out2.sparsified.sparse[j] + residual.delta()[j], out2.sparsified.accumulated[j]);
    }
    assert_eq!(out2.payload.codes.len(), 4);
    let energy: f64 = residual.delta().iter().map(|x| x * x).sum();
    assert!((out2.truncation_energy - energy).abs() < 1e-12);
}
