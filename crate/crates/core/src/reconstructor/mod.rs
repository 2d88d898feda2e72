//! Server-side group aggregation and sparse recovery.

mod aggregate;
mod gamp;
mod groups;
mod iht;
mod oracle;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_group, AggregatedObservation, DeviceObservation};
pub use gamp::{gamp_recover, GampConfig, GampInit, GampOutcome};
pub use groups::{assign_groups, Group, GroupPlan};
pub use iht::{iht_recover, iht_recover_from, IhtConfig, IhtOutcome, StepPolicy};
pub use oracle::{oracle_ls_recover, recovery_error_bound, BoundTerm};

use crate::error::{Error, Result};
use crate::linalg::MatRef;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryAlgorithm {
    /// Least squares on the true support (simulation only).
    OracleLs,
    Iht,
    Gamp,
}

impl RecoveryAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryAlgorithm::OracleLs => "oracle-ls",
            RecoveryAlgorithm::Iht => "iht",
            RecoveryAlgorithm::Gamp => "gamp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoverySettings {
    pub algorithm: RecoveryAlgorithm,
    #[serde(default)]
    pub iht: IhtConfig,
    #[serde(default)]
    pub gamp: GampConfig,
}

impl RecoverySettings {
    pub fn new(algorithm: RecoveryAlgorithm) -> Self {
        Self { algorithm, iht: IhtConfig::default(), gamp: GampConfig::default() }
    }
}

/// Recovery input for one group of one block.
#[derive(Debug, Clone)]
pub struct GroupProblem<'a> {
    pub a: MatRef<'a>,
    pub observation: AggregatedObservation,
    /// Hard-thresholding budget `K' max_k S_k`.
    pub sparsity_budget: usize,
    /// Union of the members' supports, required by the oracle.
    pub true_support: Option<Vec<usize>>,
    /// Cached `||A||^2` for the fixed-step rule.
    pub op_norm_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRecovery {
    pub estimate: Vec<f64>,
    /// Algorithm that produced the estimate; differs from the request after a fallback.
    pub algorithm: RecoveryAlgorithm,
    pub iters: usize,
    pub fell_back: bool,
}

pub fn recover_group(problem: &GroupProblem<'_>, settings: &RecoverySettings) -> Result<GroupRecovery> {
    let a = problem.a;
    let y = &problem.observation.y;
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch { expected: a.rows(), got: y.len() });
    }
    let iht = |fell_back| {
        let out = iht_recover_from(a, y, problem.sparsity_budget, &settings.iht, None, problem.op_norm_sq);
        GroupRecovery { estimate: out.estimate, algorithm: RecoveryAlgorithm::Iht, iters: out.iters, fell_back }
    };
    match settings.algorithm {
        RecoveryAlgorithm::OracleLs => {
            let support = problem
                .true_support
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("oracle recovery needs the true support".into()))?;
            Ok(GroupRecovery {
                estimate: oracle_ls_recover(a, y, support)?,
                algorithm: RecoveryAlgorithm::OracleLs,
                iters: 1,
                fell_back: false,
            })
        }
        RecoveryAlgorithm::Iht => Ok(iht(false)),
        RecoveryAlgorithm::Gamp => {
            let noise_var = problem.observation.noise_energy_model / a.rows().max(1) as f64;
            let init = GampInit::from_observation(a, y, problem.sparsity_budget, noise_var);
            let out = gamp_recover(a, y, init, &settings.gamp);
            if out.diverged {
                return Ok(iht(true));
            }
            Ok(GroupRecovery {
                estimate: out.estimate,
                algorithm: RecoveryAlgorithm::Gamp,
                iters: out.iters,
                fell_back: false,
            })
        }
    }
}

/// Recovers every group (in parallel) and sums the estimates in group order.
pub fn reconstruct_global_block(
    n: usize,
    problems: &[GroupProblem<'_>],
    settings: &RecoverySettings,
) -> Result<(Vec<f64>, Vec<GroupRecovery>)> {
    let recovered = par::map_slice(problems, |p| recover_group(p, settings)).into_iter().collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; n];
    for r in &recovered {
        if r.estimate.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: r.estimate.len() });
        }
        for (t, e) in total.iter_mut().zip(&r.estimate) {
            *t += e;
        }
    }
    Ok((total, recovered))
}

/// One row of the per-(round, block, group) recovery log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub round: usize,
    pub block: usize,
    pub group: usize,
    pub algorithm: String,
    pub iters_used: usize,
    pub nmse_vs_truth: f64,
    pub bound_value: f64,
    pub wall_time_ms: f64,
}

/// `||estimate - truth||^2 / ||truth||^2`, or the raw error when the truth is zero.
pub fn nmse(estimate: &[f64], truth: &[f64]) -> f64 {
    let err: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    let energy: f64 = truth.iter().map(|t| t * t).sum();
    if energy > 0.0 {
        err / energy
    } else {
        err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::projection_rows;

    #[test]
    fn groups_sum_exactly() {
        let a = projection_rows(6, 0, 0, 40, 80).unwrap();
        let mut x1 = vec![0.0; 80];
        let mut x2 = vec![0.0; 80];
        x1[5] = 1.0;
        x1[9] = -2.0;
        x2[60] = 0.5;
        let mk = |x: &Vec<f64>, t: Vec<usize>| GroupProblem {
            a: a.view(),
            observation: AggregatedObservation {
                y: a.mul_vec(x),
                noise_energy_model: 0.0,
                active: 1,
                conditioning: 1.0,
            },
            sparsity_budget: 2,
            true_support: Some(t),
            op_norm_sq: None,
        };
        let problems = vec![mk(&x1, vec![5, 9]), mk(&x2, vec![60])];
        let settings = RecoverySettings::new(RecoveryAlgorithm::OracleLs);
        let (total, parts) = reconstruct_global_block(80, &problems, &settings).unwrap();
        for j in 0..80 {
            assert_eq!(total[j], parts[0].estimate[j] + parts[1].estimate[j]);
            assert!((total[j] - x1[j] - x2[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_without_support_is_an_error() {
        let a = projection_rows(6, 0, 0, 4, 8).unwrap();
        let p = GroupProblem {
            a: a.view(),
            observation: AggregatedObservation {
                y: vec![1.0; 4],
                noise_energy_model: 0.0,
                active: 1,
                conditioning: 1.0,
            },
            sparsity_budget: 1,
            true_support: None,
            op_norm_sq: None,
        };
        assert!(recover_group(&p, &RecoverySettings::new(RecoveryAlgorithm::OracleLs)).is_err());
    }
}
