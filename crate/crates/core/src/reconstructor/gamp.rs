//! EM-tuned Bernoulli-Gaussian GAMP with scalar variances for `y = A x + w`.

use serde::{Deserialize, Serialize};

use crate::linalg::{norm_sq, MatRef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GampConfig {
    pub max_iters: usize,
    /// Relative change of the estimate that ends the iteration.
    pub tol: f64,
    pub damping: f64,
    /// Noise variance never drops below this fraction of `||y||^2 / M`.
    pub noise_floor: f64,
}

impl Default for GampConfig {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-4, damping: 0.7, noise_floor: 1e-10 }
    }
}

/// Starting values of the Bernoulli-Gaussian prior and the noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GampInit {
    pub sparsity_rate: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GampInit {
    /// Rate `s / N`, variance matched to `||y||^2`, and the given noise variance.
    ///
    /// The noise variance is capped at half the per-measurement energy of `y`:
    /// EM cannot recover from a start that attributes nearly all of `y` to noise.
    pub fn from_observation(a: MatRef<'_>, y: &[f64], support_guess: usize, noise_var: f64) -> Self {
        let (m, n) = (a.rows() as f64, a.cols() as f64);
        let a2 = a.frobenius_sq() / (m * n);
        let rate = (support_guess as f64 / n).clamp(1.0 / n, 1.0);
        let per_row = norm_sq(y) / m;
        let noise_var = noise_var.min(0.5 * per_row);
        let energy = (per_row - noise_var).max(per_row * 1e-3);
        Self { sparsity_rate: rate, signal_var: energy / (a2 * n * rate), noise_var }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GampOutcome {
    pub estimate: Vec<f64>,
    pub iters: usize,
    /// The residual grew tenfold over `||y||`; the estimate is not usable.
    pub diverged: bool,
    pub final_prior: GampInit,
}

fn normal_ratio(r: f64, v_small: f64, v_big: f64) -> f64 {
    // N(r; 0, v_small) / N(r; 0, v_big)
    let log = 0.5 * (v_big / v_small).ln() - 0.5 * r * r * (1.0 / v_small - 1.0 / v_big);
    log.exp()
}

pub fn gamp_recover(a: MatRef<'_>, y: &[f64], init: GampInit, cfg: &GampConfig) -> GampOutcome {
    let (m, n) = (a.rows(), a.cols());
    let y_energy = norm_sq(y);
    if y_energy == 0.0 || m == 0 || n == 0 {
        return GampOutcome { estimate: vec![0.0; n], iters: 0, diverged: false, final_prior: init };
    }
    let a2 = a.frobenius_sq() / (m as f64 * n as f64);
    let floor = cfg.noise_floor * y_energy / m as f64;
    let (mut lambda, mut theta, mut noise) = (init.sparsity_rate, init.signal_var, init.noise_var.max(floor));
    let d = cfg.damping;

    let mut x = vec![0.0; n];
    let mut vx = vec![lambda * theta; n];
    let mut s = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut rhat = vec![0.0; n];
    let mut pi = vec![0.0; n];
    let mut post_second = vec![0.0; n];
    let start_res = y_energy.sqrt();
    let mut iters = 0;
    let mut diverged = false;
    while iters < cfg.max_iters {
        iters += 1;
        // output linear step
        let vp = a2 * vx.iter().sum::<f64>();
        a.mul_vec_into(&x, &mut ax);
        for i in 0..m {
            p[i] = ax[i] - vp * s[i];
        }
        let res = ax.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        if !res.is_finite() || res > 10.0 * start_res {
            diverged = true;
            break;
        }
        // AWGN output channel
        let vs = 1.0 / (vp + noise);
        let mut z_err = 0.0;
        for i in 0..m {
            let s_new = (y[i] - p[i]) * vs;
            s[i] = d * s_new + (1.0 - d) * s[i];
            let zhat = (vp * y[i] + noise * p[i]) * vs;
            z_err += (y[i] - zhat) * (y[i] - zhat);
        }
        let vz = vp * noise * vs;
        // input linear step
        let vr = 1.0 / (a2 * m as f64 * vs);
        a.mul_t_vec_into(&s, &mut rhat);
        for j in 0..n {
            rhat[j] = x[j] + vr * rhat[j];
        }
        // Bernoulli-Gaussian denoiser
        let gain = theta / (theta + vr);
        let nu = theta * vr / (theta + vr);
        let odds = (1.0 - lambda) / lambda;
        let mut change = 0.0;
        let mut energy = 0.0;
        for j in 0..n {
            let r = rhat[j];
            let ratio = odds * normal_ratio(r, vr, theta + vr);
            let pj = if ratio.is_finite() { 1.0 / (1.0 + ratio) } else { 0.0 };
            let gamma = gain * r;
            let mean = pj * gamma;
            let second = pj * (nu + gamma * gamma);
            pi[j] = pj;
            post_second[j] = second;
            let x_new = d * mean + (1.0 - d) * x[j];
            change += (x_new - x[j]) * (x_new - x[j]);
            energy += x_new * x_new;
            x[j] = x_new;
            vx[j] = d * (second - mean * mean).max(0.0) + (1.0 - d) * vx[j];
        }
        // EM updates of the hyperparameters
        let pi_sum: f64 = pi.iter().sum();
        if pi_sum > 0.0 {
            lambda = (pi_sum / n as f64).clamp(1e-6, 1.0 - 1e-6);
            theta = (post_second.iter().sum::<f64>() / pi_sum).max(1e-300);
        }
        noise = ((z_err / m as f64) + vz).max(floor);
        if energy > 0.0 && change <= cfg.tol * cfg.tol * energy {
            break;
        }
    }
    if diverged {
        x.iter_mut().for_each(|v| *v = 0.0);
    }
    GampOutcome {
        estimate: x,
        iters,
        diverged,
        final_prior: GampInit { sparsity_rate: lambda, signal_var: theta, noise_var: noise },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::projection_rows;

    #[test]
    fn zero_observation_gives_zero() {
        let a = projection_rows(1, 0, 0, 8, 16).unwrap();
        let init = GampInit { sparsity_rate: 0.1, signal_var: 1.0, noise_var: 0.0 };
        let out = gamp_recover(a.view(), &[0.0; 8], init, &GampConfig::default());
        assert!(out.estimate.iter().all(|&v| v == 0.0));
        assert!(!out.diverged);
    }

    #[test]
    fn recovers_sparse_vector() {
        let a = projection_rows(4, 0, 0, 128, 256).unwrap();
        let mut x = vec![0.0; 256];
        for (i, j) in (0..256).step_by(23).enumerate() {
            x[j] = if i % 2 == 0 { 1.5 } else { -0.8 };
        }
        let y = a.mul_vec(&x);
        let init = GampInit::from_observation(a.view(), &y, 12, 0.0);
        let out = gamp_recover(a.view(), &y, init, &GampConfig { max_iters: 500, tol: 1e-8, ..GampConfig::default() });
        let err: f64 = out.estimate.iter().zip(&x).map(|(e, t)| (e - t) * (e - t)).sum();
        assert!(err / norm_sq(&x) < 1e-4, "nmse {}", err / norm_sq(&x));
    }
}
