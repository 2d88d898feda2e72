use fedvqcs::quantizer::{
    build_gain_codebook, build_shape_codebook, chordal_distance, decode_gain, decode_shape, encode_gain, encode_shape,
    gain_mse_at_mean, optimal_bit_allocation, shape_gain_mse_model, CodePair, CodebookBank, PackingBudget, Sign,
};
use proptest::prelude::*;

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn small_budget() -> PackingBudget {
    PackingBudget { restarts: 4, iterations: 40 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // ||a - b||^2 minimized over the sign of b equals 2 - 2|a.b|, and the
    // chordal distance is sqrt(1 - (a.b)^2).
    #[test]
    fn chordal_and_euclidean_agree(a in prop::collection::vec(-1.0f64..1.0, 5), b in prop::collection::vec(-1.0f64..1.0, 5)) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let (a, b) = (unit(&a), unit(&b));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let plus: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let minus: f64 = a.iter().zip(&b).map(|(x, y)| (x + y) * (x + y)).sum();
        prop_assert!((plus.min(minus) - (2.0 - 2.0 * dot.abs())).abs() < 1e-12);
        let d = chordal_distance(&a, &b);
        prop_assert!((d * d - (1.0 - dot * dot)).abs() < 1e-12);
    }

    #[test]
    fn shape_quantizer_is_euclidean_nearest(s in prop::collection::vec(-1.0f64..1.0, 3)) {
        prop_assume!(s.iter().any(|x| x.abs() > 1e-3));
        let s = unit(&s);
        let cb = build_shape_codebook(3, 4, 11, small_budget()).unwrap();
        let (idx, sign) = cb.quantize(&s).unwrap();
        let mut chosen = vec![0.0; 3];
        cb.decode_into(idx, sign, &mut chosen);
        let err = |c: &[f64]| c.iter().zip(&s).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let best = (0..cb.len())
            .flat_map(|i| {
                let line = cb.line(i).to_vec();
                let neg: Vec<f64> = line.iter().map(|x| -x).collect();
                [err(&line), err(&neg)]
            })
            .fold(f64::INFINITY, f64::min);
        prop_assert!(err(&chosen) <= best + 1e-12);
    }

    #[test]
    fn gain_quantizer_picks_nearest_level(h in 0.0f64..6.0) {
        let cb = build_gain_codebook(4, 3).unwrap();
        let i = cb.quantize(h).unwrap();
        let d = (cb.level(i) - h).abs();
        prop_assert!(cb.levels().iter().all(|l| d <= (l - h).abs() + 1e-12));
    }

    #[test]
    fn encode_decode_stays_in_codebooks(v in prop::collection::vec(-3.0f64..3.0, 4)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let q = CodebookBank::in_memory(5).quantizer(4, 5, 2).unwrap();
        let code = q.encode(&v).unwrap();
        q.check(code).unwrap();
        let out = q.decode(code);
        let h = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(q.gain_codebook().levels().iter().any(|l| (l - h).abs() < 1e-9));
    }
}

#[test]
fn codebook_vectors_are_unit_norm() {
    let cb = build_shape_codebook(6, 6, 3, small_budget()).unwrap();
    for i in 0..cb.len() {
        let n: f64 = cb.line(i).iter().map(|x| x * x).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn codebook_files_roundtrip() {
    let shape = build_shape_codebook(3, 3, 1, small_budget()).unwrap();
    assert_eq!(decode_shape(&encode_shape(&shape).unwrap()).unwrap(), shape);
    let gain = build_gain_codebook(3, 2).unwrap();
    assert_eq!(decode_gain(&encode_gain(&gain).unwrap()).unwrap(), gain);
}

#[test]
fn code_pair_packs_sign_in_low_bit() {
    let c = CodePair::pack_shape(5, Sign::Minus);
    assert_eq!(c, 11);
    assert_eq!(CodePair { shape: c, gain: 0 }.shape_parts(), (5, Sign::Minus));
}

// Exhaustive split search as the oracle for the allocation rule.
#[test]
fn allocation_matches_exhaustive_search() {
    for l in [2usize, 4, 8, 16] {
        for q in [1.0f64, 2.0, 4.0] {
            let total = (q * l as f64).floor() as u32;
            let best = (0..=total)
                .filter(|&qs| qs >= 1)
                .map(|qs| shape_gain_mse_model(l, qs, total - qs))
                .fold(f64::INFINITY, f64::min);
            let a = optimal_bit_allocation(l, q).unwrap();
            assert_eq!(a.shape_bits + a.gain_bits, total);
            assert!((a.modeled_mse - best).abs() <= 1e-12 * best, "L={l} Q={q}");
        }
    }
}

#[test]
fn gain_only_closed_form_at_l2() {
    assert!((gain_mse_at_mean(2) - (2.0 - std::f64::consts::PI / 2.0)).abs() < 1e-12);
}
