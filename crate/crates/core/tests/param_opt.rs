use fedvqcs::param_opt::{
    max_sparsity, ratio_params, select_ratio, subvector_dim, BlockContext, CandidateRatios, DimPolicy,
};
use proptest::prelude::*;

fn feasible(n: usize, k: usize, r: f64, s: usize) -> bool {
    let ks = (k * s) as f64;
    let u = n as f64 / ks;
    u >= std::f64::consts::E && r < n as f64 / (2.0 * ks * u.ln())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Brute force over every S on the searched regime.
    #[test]
    fn max_sparsity_matches_brute_force(n in 64usize..4000, k in 1usize..6, r in 1.0f64..4.0) {
        let brute = (1..n).filter(|&s| k * s < n && feasible(n, k, r, s)).max();
        match (max_sparsity(n, k, r), brute) {
            (Ok(s), Some(b)) => prop_assert_eq!(s, b),
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "got {:?}, want {:?}", got, want),
        }
    }

    #[test]
    fn ratio_params_respect_capacity(
        n in 500usize..3000,
        entries_frac in 0.5f64..1.0,
        c in 0.05f64..0.5,
        ridx in 0usize..7,
    ) {
        let r = CandidateRatios::default().values()[ridx];
        let mut ctx = BlockContext::new(n, 3);
        ctx.entries = ((n as f64 * entries_frac) as usize).max(1);
        if let Ok((p, alloc)) = ratio_params(&ctx, c, r) {
            prop_assert!(p.validate(n).is_ok());
            prop_assert!(((p.subvectors as u64) * u64::from(p.shape_bits + p.gain_bits)) as f64 <= c * ctx.entries as f64 + 1e-9);
            prop_assert_eq!(p.rows, p.subvectors * p.dim);
            prop_assert!(p.rows <= n);
            prop_assert_eq!(alloc.shape_bits + alloc.gain_bits, (c * r * p.dim as f64 + 1e-9).floor() as u32);
        }
    }

    #[test]
    fn selection_is_argmin(g in prop::collection::vec(-2.0f64..2.0, 800), c in 0.08f64..0.4) {
        let ctx = BlockContext::new(800, 3);
        let cands = CandidateRatios::default();
        if let Ok(sel) = select_ratio(&g, c, &ctx, &cands) {
            for s in &sel.scored {
                prop_assert!(sel.chosen.objective() <= s.objective());
            }
        }
    }
}

#[test]
fn candidate_grid() {
    assert_eq!(CandidateRatios::default().values(), &[1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0]);
    assert!(CandidateRatios::new(vec![]).is_err());
    assert!(CandidateRatios::new(vec![0.5]).is_err());
}

#[test]
fn subvector_dim_respects_footprint() {
    // Q_s = 2L bits: L 2^(2L) <= 2^15 first holds at L = 6
    assert_eq!(subvector_dim(10, |l| Some(2 * l as u32)), 6);
    assert_eq!(subvector_dim(10, |_| None), 1);
}

#[test]
fn fixed_dim_is_honored() {
    let mut ctx = BlockContext::new(1591, 3);
    ctx.dim_policy = DimPolicy::Fixed(10);
    let (p, _) = ratio_params(&ctx, 0.1, 2.0).unwrap();
    assert_eq!((p.dim, p.shape_bits + p.gain_bits), (10, 2));
    ctx.dim_policy = DimPolicy::Fixed(4);
    assert!(ratio_params(&ctx, 0.1, 2.0).is_err());
}

#[test]
fn invalid_inputs_error() {
    let ctx = BlockContext::new(1000, 3);
    assert!(ratio_params(&ctx, 0.0, 2.0).is_err());
    assert!(max_sparsity(1000, 0, 2.0).is_err());
    assert!(max_sparsity(1000, 3, 0.5).is_err());
    assert!(select_ratio(&[0.0; 10], 0.1, &ctx, &CandidateRatios::default()).is_err());
}
