use crate::compressor::{dequantize_projection, CompressedBlockPayload};
use crate::error::{Error, Result};
use crate::quantizer::ShapeGainQuantizer;

/// A device's dequantized contribution to a group.
#[derive(Debug, Clone)]
pub struct DeviceObservation {
    /// Binary32 scaling factor as received; `0.0` is the zero-block sentinel.
    pub alpha: f32,
    /// Dequantized projection `x_hat` of length `M`.
    pub x_hat: Vec<f64>,
    /// Aggregation weight `rho_k`.
    pub weight: f64,
    /// Subvector dimension `L_k`.
    pub dim: usize,
    /// Modeled quantizer MSE per subvector `sigma^2_{L,Q_k}`.
    pub modeled_mse: f64,
}

impl DeviceObservation {
    pub fn from_payload(
        payload: &CompressedBlockPayload,
        q: &ShapeGainQuantizer,
        weight: f64,
        modeled_mse: f64,
    ) -> Result<Self> {
        let x_hat = if payload.is_zero_sentinel() {
            vec![0.0; payload.codes.len() * q.dim()]
        } else {
            dequantize_projection(&payload.codes, q)?
        };
        Ok(Self { alpha: payload.alpha, x_hat, weight, dim: q.dim(), modeled_mse })
    }

    pub fn is_zero_sentinel(&self) -> bool {
        self.alpha.to_bits() == 0
    }

    /// `rho / alpha`
    pub fn scale(&self) -> f64 {
        self.weight / f64::from(self.alpha)
    }
}

/// `y = sum_k (rho_k / alpha_k) x_hat_k` for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedObservation {
    pub y: Vec<f64>,
    /// `K' (M / L) sum_k (rho_k / alpha_k)^2 sigma^2_k`
    pub noise_energy_model: f64,
    /// Members that contributed a nonzero block.
    pub active: usize,
    /// Largest `rho / alpha` among active members over the smallest; 1 when fewer than two.
    pub conditioning: f64,
}

pub fn aggregate_group(observations: &[DeviceObservation], rows: usize, cap: usize) -> Result<AggregatedObservation> {
    let mut y = vec![0.0; rows];
    let mut noise = 0.0;
    let mut active = 0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for obs in observations {
        if obs.x_hat.len() != rows {
            return Err(Error::GroupMismatch(format!(
                "projection length {} in a group with M = {rows}",
                obs.x_hat.len()
            )));
        }
        if obs.is_zero_sentinel() {
            continue;
        }
        let c = obs.scale();
        for (yi, xi) in y.iter_mut().zip(&obs.x_hat) {
            *yi += c * xi;
        }
        noise += (rows as f64 / obs.dim as f64) * c * c * obs.modeled_mse;
        active += 1;
        lo = lo.min(c.abs());
        hi = hi.max(c.abs());
    }
    let conditioning = if active >= 2 { hi / lo } else { 1.0 };
    Ok(AggregatedObservation { y, noise_energy_model: cap as f64 * noise, active, conditioning })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(alpha: f32, x_hat: Vec<f64>, weight: f64) -> DeviceObservation {
        DeviceObservation { alpha, x_hat, weight, dim: 2, modeled_mse: 0.5 }
    }

    #[test]
    fn weights_and_sentinels() {
        let o = vec![obs(0.5, vec![1.0, 2.0], 0.25), obs(0.0, vec![9.0, 9.0], 0.25), obs(2.0, vec![4.0, -4.0], 0.5)];
        let agg = aggregate_group(&o, 2, 3).unwrap();
        assert_eq!(agg.y, vec![0.5 + 1.0, 1.0 - 1.0]);
        assert_eq!(agg.active, 2);
        let expect = 3.0 * (1.0 * 0.25 + 1.0 * 0.0625) * 0.5;
        assert!((agg.noise_energy_model - expect).abs() < 1e-12);
    }

    #[test]
    fn all_zero_sentinels() {
        let o = vec![obs(0.0, vec![1.0, 1.0], 0.5), obs(0.0, vec![2.0, 2.0], 0.5)];
        let agg = aggregate_group(&o, 2, 2).unwrap();
        assert_eq!(agg.y, vec![0.0, 0.0]);
        assert_eq!(agg.noise_energy_model, 0.0);
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(aggregate_group(&[obs(1.0, vec![1.0; 3], 1.0)], 2, 1).is_err());
    }
}
