use serde::{Deserialize, Serialize};

use super::oracle::solve_on_support;
use crate::compressor::top_s_indices;
use crate::linalg::{norm_sq, MatRef};

/// Step-size rule of iterative hard thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    /// `1 / ||A||^2` from power iteration.
    Fixed,
    /// Normalized IHT: exact line search on the current support with backtracking.
    Normalized,
    /// Hard thresholding pursuit: normalized step to pick the support, then least squares on it.
    Pursuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IhtConfig {
    pub max_iters: usize,
    /// Relative residual change that ends the iteration.
    pub tol: f64,
    pub step: StepPolicy,
    /// Refit the final support by least squares.
    pub debias: bool,
}

impl Default for IhtConfig {
    fn default() -> Self {
        Self { max_iters: 3000, tol: 1e-6, step: StepPolicy::Fixed, debias: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhtOutcome {
    pub estimate: Vec<f64>,
    pub iters: usize,
}

fn threshold(v: &mut [f64], s: usize) -> Vec<usize> {
    let keep = top_s_indices(v, s);
    let mut mask = vec![false; v.len()];
    for &i in &keep {
        mask[i] = true;
    }
    for (x, m) in v.iter_mut().zip(mask) {
        if !m {
            *x = 0.0;
        }
    }
    keep.into_iter().filter(|&i| v[i] != 0.0).collect()
}

fn residual(a: MatRef<'_>, y: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
    a.mul_vec_into(x, r);
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri = yi - *ri;
    }
    norm_sq(r)
}

/// Normalized step `||g_T||^2 / ||A g_T||^2` on support `t`.
fn normalized_step(a: MatRef<'_>, g: &[f64], t: &[usize]) -> f64 {
    let gt: Vec<(usize, f64)> = t.iter().map(|&i| (i, g[i])).collect();
    let num: f64 = gt.iter().map(|(_, v)| v * v).sum();
    if num == 0.0 {
        return 0.0;
    }
    let den = norm_sq(&a.mul_sparse(&gt));
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Iterative hard thresholding for `y = A x` with `||x||_0 <= sparsity`.
pub fn iht_recover(a: MatRef<'_>, y: &[f64], sparsity: usize, cfg: &IhtConfig) -> IhtOutcome {
    iht_recover_from(a, y, sparsity, cfg, None, None)
}

/// As [`iht_recover`], optionally warm-started and with a precomputed `||A||^2`.
pub fn iht_recover_from(
    a: MatRef<'_>,
    y: &[f64],
    sparsity: usize,
    cfg: &IhtConfig,
    init: Option<&[f64]>,
    op_norm_sq: Option<f64>,
) -> IhtOutcome {
    let (m, n) = (a.rows(), a.cols());
    let s = sparsity.min(m).min(n);
    let mut x = init.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if norm_sq(y) == 0.0 || s == 0 {
        return IhtOutcome { estimate: vec![0.0; n], iters: 0 };
    }
    let mut support = threshold(&mut x, s);
    let mut r = vec![0.0; m];
    let mut res = residual(a, y, &x, &mut r);
    let mut best = (res, x.clone());
    let fixed_step = match cfg.step {
        StepPolicy::Fixed => {
            let l = op_norm_sq.unwrap_or_else(|| a.op_norm_sq(100));
            if l > 0.0 {
                1.0 / l
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    let mut g = vec![0.0; n];
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        a.mul_t_vec_into(&r, &mut g);
        let mut next = x.clone();
        let next_support = match cfg.step {
            StepPolicy::Fixed => {
                next.iter_mut().zip(&g).for_each(|(xi, gi)| *xi += fixed_step * gi);
                threshold(&mut next, s)
            }
            StepPolicy::Normalized | StepPolicy::Pursuit => {
                let t = if support.is_empty() {
                    let mut g0 = g.clone();
                    threshold(&mut g0, s)
                } else {
                    support.clone()
                };
                let mut mu = normalized_step(a, &g, &t);
                let mut attempt = 0;
                loop {
                    next.copy_from_slice(&x);
                    next.iter_mut().zip(&g).for_each(|(xi, gi)| *xi += mu * gi);
                    let ns = threshold(&mut next, s);
                    if cfg.step == StepPolicy::Pursuit || ns == support || attempt >= 30 {
                        break ns;
                    }
                    // Support changed: accept only if the step is below the local curvature bound.
                    let diff: Vec<(usize, f64)> =
                        (0..n).filter(|&i| next[i] != x[i]).map(|i| (i, next[i] - x[i])).collect();
                    let num: f64 = diff.iter().map(|(_, v)| v * v).sum();
                    let den = norm_sq(&a.mul_sparse(&diff));
                    let omega = if den > 0.0 { 0.99 * num / den } else { f64::INFINITY };
                    if mu <= omega {
                        break ns;
                    }
                    mu /= 2.0 * 0.99;
                    attempt += 1;
                }
            }
        };
        if cfg.step == StepPolicy::Pursuit {
            let same = next_support == support;
            if let Ok(z) = solve_on_support(a, y, &next_support) {
                next.iter_mut().for_each(|v| *v = 0.0);
                for (&j, v) in next_support.iter().zip(z) {
                    next[j] = v;
                }
            }
            x = next;
            support = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
            let new_res = residual(a, y, &x, &mut r);
            if new_res < best.0 {
                best = (new_res, x.clone());
            }
            let done = same || new_res == 0.0 || (res - new_res).abs() <= cfg.tol * res;
            res = new_res;
            if done {
                break;
            }
            continue;
        }
        x = next;
        support = next_support;
        let new_res = residual(a, y, &x, &mut r);
        if new_res < best.0 {
            best = (new_res, x.clone());
        }
        let done = new_res == 0.0 || (res - new_res).abs() <= cfg.tol * res;
        res = new_res;
        if done {
            break;
        }
    }
    let mut estimate = best.1;
    if cfg.debias {
        let t: Vec<usize> = (0..n).filter(|&i| estimate[i] != 0.0).collect();
        if !t.is_empty() && t.len() <= m {
            if let Ok(z) = solve_on_support(a, y, &t) {
                estimate.iter_mut().for_each(|v| *v = 0.0);
                for (&j, v) in t.iter().zip(z) {
                    estimate[j] = v;
                }
            }
        }
    }
    IhtOutcome { estimate, iters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::projection_rows;

    #[test]
    fn zero_observation_gives_zero() {
        let a = projection_rows(1, 0, 0, 8, 16).unwrap();
        let out = iht_recover(a.view(), &[0.0; 8], 3, &IhtConfig::default());
        assert!(out.estimate.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recovers_a_small_sparse_vector() {
        let a = projection_rows(2, 0, 0, 64, 128).unwrap();
        let mut x = vec![0.0; 128];
        for (i, &j) in [3usize, 40, 77, 100, 121].iter().enumerate() {
            x[j] = 1.0 + i as f64;
        }
        let y = a.mul_vec(&x);
        for step in [StepPolicy::Fixed, StepPolicy::Normalized, StepPolicy::Pursuit] {
            let cfg = IhtConfig { max_iters: 2000, step, ..IhtConfig::default() };
            let out = iht_recover(a.view(), &y, 5, &cfg);
            for (e, t) in out.estimate.iter().zip(&x) {
                assert!((e - t).abs() < 1e-6, "{step:?}");
            }
        }
    }
}
