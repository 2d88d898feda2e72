//! Stand-alone measurement routines shared by the command-line driver and tests.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compressor::{dequantize_projection, project, projection_rows, quantize_projection, sparsify};
use crate::error::{Error, Result};
use crate::par;
use crate::param_opt::{max_sparsity, ratio_params, BlockContext, CandidateRatios};
use crate::quantizer::{shape_gain_mse_model, CodebookBank, ShapeGainQuantizer};
use crate::reconstructor::{
    aggregate_group, nmse, oracle_ls_recover, recover_group, recovery_error_bound, AggregatedObservation, BoundTerm,
    DeviceObservation, GroupProblem, RecoverySettings,
};
use crate::rng::{stream, Domain};

const MC_CHUNK: usize = 4096;

/// Mean `||v - Q(v)||^2` over `samples` standard-Gaussian vectors.
///
/// Samples are drawn in fixed-size chunks with one stream each, so the result
/// does not depend on the thread count.
pub fn vq_monte_carlo(q: &ShapeGainQuantizer, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let l = q.dim();
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial = par::map_range(chunks, |c| -> Result<f64> {
        let mut rng = stream(seed, Domain::Trials, l as u64, c as u64);
        let count = MC_CHUNK.min(samples - c * MC_CHUNK);
        let mut v = vec![0.0; l];
        let mut out = vec![0.0; l];
        let mut sum = 0.0;
        for _ in 0..count {
            v.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            let code = q.encode(&v)?;
            q.decode_into(code, &mut out);
            sum += v.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    Ok(total / samples as f64)
}

/// One row of the quantizer benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqBenchRow {
    pub dim: usize,
    pub shape_bits: u32,
    pub gain_bits: u32,
    pub samples: usize,
    pub empirical_mse: f64,
    pub model_mse: f64,
    pub ratio: f64,
    pub min_chordal: f64,
}

pub fn vq_bench_row(q: &ShapeGainQuantizer, samples: usize, seed: u64) -> Result<VqBenchRow> {
    let empirical_mse = vq_monte_carlo(q, samples, seed)?;
    let model_mse = shape_gain_mse_model(q.dim(), q.shape_bits(), q.gain_bits());
    Ok(VqBenchRow {
        dim: q.dim(),
        shape_bits: q.shape_bits(),
        gain_bits: q.gain_bits(),
        samples,
        empirical_mse,
        model_mse,
        ratio: empirical_mse / model_mse,
        min_chordal: q.shape_codebook().achieved_min_chordal(),
    })
}

/// A noiseless single-group recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrialConfig {
    pub n: usize,
    pub ratio: f64,
    pub group_cap: usize,
    /// Per-device sparsity; derived from `(N, K', R)` when absent.
    pub sparsity: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrialRow {
    pub trial: usize,
    pub n: usize,
    pub rows: usize,
    pub group_cap: usize,
    pub sparsity: usize,
    pub algorithm: String,
    pub iters: usize,
    pub exact_support: bool,
    pub nmse: f64,
}

/// Support of `v`: indices whose magnitude exceeds `tol` times the largest.
pub fn support_of(v: &[f64], tol: f64) -> Vec<usize> {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    (0..v.len()).filter(|&j| v[j].abs() > tol * max).collect()
}

/// `K'` devices with `S`-sparse Gaussian blocks on independent random supports,
/// weights `1 / K'`, unquantized projections.
pub fn recovery_trial(
    cfg: &RecoveryTrialConfig,
    trial: usize,
    settings: &RecoverySettings,
) -> Result<RecoveryTrialRow> {
    let rows = ((cfg.n as f64 / cfg.ratio).round() as usize).min(cfg.n);
    let s = match cfg.sparsity {
        Some(s) => s,
        None => max_sparsity(cfg.n, cfg.group_cap, cfg.ratio)?,
    };
    let mut rng = stream(cfg.seed, Domain::Trials, 1 << 32 | trial as u64, 0);
    let weight = 1.0 / cfg.group_cap as f64;
    let mut truth = vec![0.0; cfg.n];
    for _ in 0..cfg.group_cap {
        for j in sample(&mut rng, cfg.n, s.min(cfg.n)) {
            truth[j] += weight * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let a = projection_rows(cfg.seed, 1 + trial as u64, 0, rows, cfg.n)?;
    let y = a.mul_vec(&truth);
    let true_support = support_of(&truth, 0.0);
    let problem = GroupProblem {
        a: a.view(),
        observation: AggregatedObservation { y, noise_energy_model: 0.0, active: cfg.group_cap, conditioning: 1.0 },
        sparsity_budget: (cfg.group_cap * s).min(rows),
        true_support: Some(true_support.clone()),
        op_norm_sq: None,
    };
    let rec = recover_group(&problem, settings)?;
    let found = support_of(&rec.estimate, 1e-6);
    Ok(RecoveryTrialRow {
        trial,
        n: cfg.n,
        rows,
        group_cap: cfg.group_cap,
        sparsity: s,
        algorithm: rec.algorithm.name().to_string(),
        iters: rec.iters,
        exact_support: found == true_support,
        nmse: nmse(&rec.estimate, &truth),
    })
}

/// Capacities drawn by [`bound_trial`].
pub const BOUND_TRIAL_CAPACITIES: [f64; 4] = [0.1, 0.2, 0.3, 0.5];

/// One randomized check of the reconstruction-error bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrialRow {
    pub trial: usize,
    pub n: usize,
    pub rows: usize,
    pub group_cap: usize,
    pub capacity: f64,
    pub ratio: f64,
    pub dim: usize,
    pub shape_bits: u32,
    pub gain_bits: u32,
    pub sparsity: usize,
    /// Size of the union of the device supports.
    pub aggregate_support: usize,
    /// `||g_hat - sum_k rho_k g_bar_k||^2` under oracle least squares.
    pub mse: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Draws `K'`, `C` and `R`, builds one group of compressible device blocks,
/// runs them through the real quantizers and recovers by oracle least squares.
///
/// Each `g_bar` has a random number of `N(0, 1)` entries between `S/2` and `2S`
/// on a random support, over a dense `N(0, 10^-4)` floor.
pub fn bound_trial(n: usize, seed: u64, trial: usize, bank: &CodebookBank) -> Result<BoundTrialRow> {
    let mut rng = stream(seed, Domain::Trials, 2 << 32 | trial as u64, 0);
    let cap = rng.random_range(1..=4usize);
    let candidates = CandidateRatios::default();
    let ratio = candidates.values()[rng.random_range(0..candidates.values().len())];
    let capacity = BOUND_TRIAL_CAPACITIES[rng.random_range(0..BOUND_TRIAL_CAPACITIES.len())];
    let (params, alloc) = ratio_params(&BlockContext::new(n, cap), capacity, ratio)?;
    let q = bank.quantizer(params.dim, params.shape_bits, params.gain_bits)?;
    let a = projection_rows(seed, 1 << 20 | trial as u64, 0, params.rows, n)?;
    let s = params.sparsity;
    let weight = 1.0 / cap as f64;
    let mut truth = vec![0.0; n];
    let mut union = vec![false; n];
    let mut obs = Vec::with_capacity(cap);
    let mut terms = Vec::with_capacity(cap);
    for _ in 0..cap {
        let mut gbar: Vec<f64> = (0..n).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let active = rng.random_range((s / 2).max(1)..=(2 * s).min(n));
        for j in sample(&mut rng, n, active) {
            gbar[j] += rng.sample::<f64, _>(StandardNormal);
        }
        let sparse = sparsify(&gbar, s);
        let nonzeros: Vec<(usize, f64)> =
            sparse.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
        let truncation_energy = gbar.iter().zip(&sparse).map(|(g, t)| (g - t) * (g - t)).sum();
        let (x, alpha) = project(&nonzeros, a.view());
        let x_hat = dequantize_projection(&quantize_projection(&x, &q)?, &q)?;
        obs.push(DeviceObservation { alpha, x_hat, weight, dim: params.dim, modeled_mse: alloc.modeled_mse });
        terms.push(BoundTerm {
            truncation_energy,
            sparsity: s,
            ratio: n as f64 / params.rows as f64,
            alpha: f64::from(alpha),
            weight,
            modeled_mse: alloc.modeled_mse,
            dim: params.dim,
        });
        for &(j, _) in &nonzeros {
            union[j] = true;
        }
        truth.iter_mut().zip(&gbar).for_each(|(t, g)| *t += weight * g);
    }
    let agg = aggregate_group(&obs, params.rows, cap)?;
    let support: Vec<usize> = (0..n).filter(|&j| union[j]).collect();
    let estimate = oracle_ls_recover(a.view(), &agg.y, &support)?;
    let mse = estimate.iter().zip(&truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>();
    let bound = recovery_error_bound(&terms, n, cap);
    Ok(BoundTrialRow {
        trial,
        n,
        rows: params.rows,
        group_cap: cap,
        capacity,
        ratio,
        dim: params.dim,
        shape_bits: params.shape_bits,
        gain_bits: params.gain_bits,
        sparsity: s,
        aggregate_support: support.len(),
        mse,
        bound,
        holds: mse <= bound,
    })
}
