use std::collections::BTreeSet;

use fedvqcs::compressor::{project, projection_rows};
use fedvqcs::reconstructor::{
    aggregate_group, assign_groups, gamp_recover, iht_recover, nmse, oracle_ls_recover, recover_group,
    recovery_error_bound, AggregatedObservation, BoundTerm, DeviceObservation, GampConfig, GampInit, GroupProblem,
    IhtConfig, RecoveryAlgorithm, RecoverySettings, StepPolicy,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sparse_vec(n: usize, support: &[usize], seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for (i, &j) in support.iter().enumerate() {
        // bounded away from zero, alternating sign
        let mag = 1.0 + ((seed as usize + 3 * i) % 7) as f64 / 7.0;
        v[j] = if i % 2 == 0 { mag } else { -mag };
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn groups_partition_devices(
        devs in prop::collection::vec((0usize..3, 0usize..3), 1..25),
        cap in 1usize..6,
    ) {
        let ratios = [1.5, 2.0, 2.5];
        let rows = [100, 200, 300];
        let input: Vec<_> = devs.iter().enumerate().map(|(k, &(r, m))| (k, ratios[r], rows[m])).collect();
        let plan = assign_groups(&input, cap);
        let mut seen = BTreeSet::new();
        for g in &plan.groups {
            prop_assert!(!g.members.is_empty() && g.members.len() <= cap);
            prop_assert!(g.members.windows(2).all(|w| w[0] < w[1]));
            for &k in &g.members {
                prop_assert!(seen.insert(k));
                prop_assert_eq!((input[k].1, input[k].2), (g.ratio, g.rows));
            }
        }
        prop_assert_eq!(seen.len(), input.len());
        // the fewest groups a cap allows, bucket by bucket
        let mut buckets = std::collections::BTreeMap::new();
        for &(_, r, m) in &input {
            *buckets.entry((r.to_bits(), m)).or_insert(0usize) += 1;
        }
        let minimal: usize = buckets.values().map(|c| c.div_ceil(cap)).sum();
        prop_assert_eq!(plan.len(), minimal);
    }

    #[test]
    fn oracle_ls_matches_normal_equations(seed in 0u64..50, s in 1usize..8) {
        let (m, n) = (30, 60);
        let a = projection_rows(seed, 0, 0, m, n).unwrap();
        let support: Vec<usize> = (0..s).map(|i| (i * 7 + seed as usize) % n).collect::<BTreeSet<_>>().into_iter().collect();
        let y: Vec<f64> = (0..m).map(|i| ((i * 13 + 5) % 9) as f64 - 4.0).collect();
        let got = oracle_ls_recover(a.view(), &y, &support).unwrap();
        // independent solve of A_T^T A_T z = A_T^T y
        let at = DMatrix::from_fn(m, support.len(), |i, j| a.get(i, support[j]));
        let rhs = at.transpose() * nalgebra::DVector::from_column_slice(&y);
        let z = (at.transpose() * &at).cholesky().unwrap().solve(&rhs);
        for (j, &col) in support.iter().enumerate() {
            prop_assert!((got[col] - z[j]).abs() < 1e-8 * (1.0 + z[j].abs()));
        }
        for j in (0..n).filter(|j| !support.contains(j)) {
            prop_assert_eq!(got[j], 0.0);
        }
    }
}

#[test]
fn lossless_aggregation_is_weighted_sum() {
    let (m, n) = (20, 50);
    let a = projection_rows(4, 0, 0, m, n).unwrap();
    let g1 = sparse_vec(n, &[2, 9, 30], 1);
    let g2 = sparse_vec(n, &[9, 44], 2);
    let weights = [0.3, 0.7];
    let obs: Vec<DeviceObservation> = [&g1, &g2]
        .iter()
        .zip(weights)
        .map(|(g, w)| {
            let nz: Vec<(usize, f64)> =
                g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
            let (x, alpha) = project(&nz, a.view());
            DeviceObservation { alpha, x_hat: x, weight: w, dim: 4, modeled_mse: 0.0 }
        })
        .collect();
    let agg = aggregate_group(&obs, m, 2).unwrap();
    let truth: Vec<f64> = (0..n).map(|j| weights[0] * g1[j] + weights[1] * g2[j]).collect();
    let expect = a.mul_vec(&truth);
    for (y, e) in agg.y.iter().zip(&expect) {
        assert!((y - e).abs() < 1e-9 * (1.0 + e.abs()));
    }
    assert_eq!(agg.active, 2);
    assert_eq!(agg.noise_energy_model, 0.0);
}

#[test]
fn zero_sentinel_is_skipped() {
    let obs = vec![
        DeviceObservation { alpha: 0.0, x_hat: vec![0.0; 8], weight: 0.5, dim: 4, modeled_mse: 1.0 },
        DeviceObservation { alpha: 2.0, x_hat: vec![1.0; 8], weight: 0.5, dim: 4, modeled_mse: 1.0 },
    ];
    let agg = aggregate_group(&obs, 8, 2).unwrap();
    assert_eq!(agg.active, 1);
    assert!(agg.y.iter().all(|y| (*y - 0.25).abs() < 1e-15));
    assert!(aggregate_group(&obs, 12, 2).is_err());
}

fn noiseless_problem(
    seed: u64,
    m: usize,
    n: usize,
    support: &[usize],
) -> (fedvqcs::linalg::Matrix, Vec<f64>, Vec<f64>) {
    let a = projection_rows(seed, 0, 0, m, n).unwrap();
    let x = sparse_vec(n, support, seed);
    let y = a.mul_vec(&x);
    (a, x, y)
}

#[test]
fn iht_and_oracle_recover_sparse_signal() {
    let support = [3, 40, 77, 101, 150, 199];
    let (a, x, y) = noiseless_problem(21, 100, 200, &support);
    let oracle = oracle_ls_recover(a.view(), &y, &support).unwrap();
    assert!(nmse(&oracle, &x) < 1e-12);
    let cfg = IhtConfig { step: StepPolicy::Normalized, ..IhtConfig::default() };
    let iht = iht_recover(a.view(), &y, support.len(), &cfg);
    assert!(nmse(&iht.estimate, &x) < 1e-8, "iht nmse {}", nmse(&iht.estimate, &x));
}

#[test]
fn fixed_step_iht_recovers_very_sparse_signal() {
    for seed in 0..10 {
        let support = [seed as usize, 77, 150];
        let (a, x, y) = noiseless_problem(seed, 100, 200, &support);
        let iht = iht_recover(a.view(), &y, 3, &IhtConfig::default());
        assert!(nmse(&iht.estimate, &x) < 1e-8, "seed {seed}");
    }
}

#[test]
fn gamp_recovers_sparse_signal() {
    let support = [3, 40, 77, 101, 150, 199];
    let (a, x, y) = noiseless_problem(22, 100, 200, &support);
    let init = GampInit::from_observation(a.view(), &y, support.len(), 0.0);
    let cfg = GampConfig { max_iters: 500, tol: 1e-8, ..GampConfig::default() };
    let out = gamp_recover(a.view(), &y, init, &cfg);
    assert!(!out.diverged);
    assert!(nmse(&out.estimate, &x) < 1e-3, "gamp nmse {}", nmse(&out.estimate, &x));
}

#[test]
fn recover_group_dispatches() {
    let support = vec![5, 60, 90];
    let (a, x, y) = noiseless_problem(8, 80, 120, &support);
    let problem = GroupProblem {
        a: a.view(),
        observation: AggregatedObservation { y, noise_energy_model: 0.0, active: 1, conditioning: 1.0 },
        sparsity_budget: 3,
        true_support: Some(support),
        op_norm_sq: None,
    };
    for alg in [RecoveryAlgorithm::OracleLs, RecoveryAlgorithm::Iht] {
        let out = recover_group(&problem, &RecoverySettings::new(alg)).unwrap();
        assert_eq!(out.algorithm, alg);
        assert!(nmse(&out.estimate, &x) < 1e-8, "{}", alg.name());
    }
}

#[test]
fn bound_matches_direct_formula() {
    let terms = [
        BoundTerm {
            truncation_energy: 0.4,
            sparsity: 10,
            ratio: 2.0,
            alpha: 0.5,
            weight: 0.25,
            modeled_mse: 1.5,
            dim: 8,
        },
        BoundTerm {
            truncation_energy: 1.1,
            sparsity: 12,
            ratio: 1.5,
            alpha: 0.2,
            weight: 0.75,
            modeled_mse: 0.8,
            dim: 4,
        },
    ];
    let (n, k) = (1000usize, 2usize);
    let kf = k as f64;
    let direct: f64 = terms
        .iter()
        .map(|t| {
            let q = kf * t.sparsity as f64 * t.ratio * t.modeled_mse / (n as f64 * t.dim as f64 * t.alpha.powi(2));
            t.weight.powi(2) * (t.truncation_energy + q)
        })
        .sum::<f64>()
        * kf;
    assert!((recovery_error_bound(&terms, n, k) - direct).abs() < 1e-12 * direct);
}
