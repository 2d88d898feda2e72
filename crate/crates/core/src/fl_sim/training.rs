use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::mlp::Mlp;
use super::partition::DevicePartition;
use crate::error::{Error, Result};

/// `E` mini-batch SGD steps from `w`; returns `g = (w - w_E) / (eta E)`.
///
/// Each step draws `batch` distinct samples of the device's data (all of it if
/// the batch is at least as large).
pub fn local_update(
    model: &Mlp,
    w: &[f64],
    data: &Dataset,
    part: &DevicePartition,
    local_iters: usize,
    batch: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if part.indices.is_empty() {
        return Err(Error::Dataset(format!("device {} has no samples", part.device)));
    }
    if local_iters == 0 || batch == 0 || lr <= 0.0 {
        return Err(Error::InvalidArgument("local_iters, batch and lr must be positive".into()));
    }
    let mut cur = w.to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut idx = Vec::with_capacity(batch);
    for _ in 0..local_iters {
        idx.clear();
        if batch >= part.indices.len() {
            idx.extend_from_slice(&part.indices);
        } else {
            idx.extend(sample(rng, part.indices.len(), batch).into_iter().map(|i| part.indices[i]));
        }
        model.loss_and_grad(&cur, data, &idx, &mut grad);
        cur.iter_mut().zip(&grad).for_each(|(c, g)| *c -= lr * g);
    }
    let scale = 1.0 / (lr * local_iters as f64);
    Ok(w.iter().zip(&cur).map(|(a, b)| (a - b) * scale).collect())
}

/// Update rule applied by the server to the reconstructed global update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GlobalOptimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl GlobalOptimizer {
    pub fn adam(lr: f64) -> Self {
        GlobalOptimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state (moments of ADAM; unused by SGD).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

/// `w <- w - gamma g_hat` for SGD, the bias-corrected ADAM step otherwise.
pub fn global_update(w: &mut [f64], g_hat: &[f64], opt: &GlobalOptimizer, state: &mut OptimizerState) -> Result<()> {
    if w.len() != g_hat.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), got: g_hat.len() });
    }
    match *opt {
        GlobalOptimizer::Sgd { lr } => {
            w.iter_mut().zip(g_hat).for_each(|(x, g)| *x -= lr * g);
        }
        GlobalOptimizer::Adam { lr, beta1, beta2, eps } => {
            if state.m.len() != w.len() {
                state.m = vec![0.0; w.len()];
                state.v = vec![0.0; w.len()];
                state.step = 0;
            }
            state.step += 1;
            let c1 = 1.0 - beta1.powi(state.step as i32);
            let c2 = 1.0 - beta2.powi(state.step as i32);
            for i in 0..w.len() {
                let g = g_hat[i];
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mh = state.m[i] / c1;
                let vh = state.v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut st = OptimizerState::default();
        let mut w = vec![1.0, -2.0];
        global_update(&mut w, &[0.0, 0.0], &GlobalOptimizer::Sgd { lr: 0.3 }, &mut st).unwrap();
        assert_eq!(w, vec![1.0, -2.0]);
        let g = w.clone();
        global_update(&mut w, &g, &GlobalOptimizer::Sgd { lr: 1.0 }, &mut st).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut st = OptimizerState::default();
        let mut w = vec![0.5, 0.5, 0.5];
        let g = [0.2, -3.0, 0.0];
        global_update(&mut w, &g, &GlobalOptimizer::adam(0.01), &mut st).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for (wi, gi) in w.iter().zip(g) {
            let expect = 0.5 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((wi - expect).abs() < 1e-15);
        }
    }
}
