//! Lloyd-Max gain codebooks for the norm of an `L`-dimensional standard Gaussian.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::model::gain_mean;
use crate::error::{Error, Result};

pub const MAX_GAIN_BITS: u32 = 16;

const TAIL_MASS: f64 = 1e-12;
const SIMPSON_TOL: f64 = 1e-10;
const LEVEL_TOL: f64 = 1e-9;
const MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCodebook {
    dim: usize,
    bits: u32,
    levels: Vec<f64>,
    boundaries: Vec<f64>,
}

impl GainCodebook {
    pub(crate) fn from_raw_parts(dim: usize, bits: u32, levels: Vec<f64>, boundaries: Vec<f64>) -> Self {
        Self { dim, bits, levels, boundaries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Index of the nearest level; a gain exactly on a boundary maps to the lower cell.
    pub fn quantize(&self, h: f64) -> Result<usize> {
        if !(h >= 0.0) {
            return Err(Error::NegativeGain(h));
        }
        Ok(self.boundaries.partition_point(|&b| b < h))
    }

    pub fn level(&self, index: usize) -> f64 {
        self.levels[index]
    }
}

/// Density of `h = ||v||`, `v ~ N(0, I_L)` (the chi distribution with `L` degrees of freedom).
pub struct GainDensity {
    dim: f64,
    log_norm: f64,
}

impl GainDensity {
    pub fn new(dim: usize) -> Self {
        let l = dim as f64;
        let log_norm = 2f64.ln() - ln_gamma(l / 2.0) - 0.5 * l * 2f64.ln();
        Self { dim: l, log_norm }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        if z < 0.0 {
            return 0.0;
        }
        if z == 0.0 {
            return if self.dim == 1.0 { self.log_norm.exp() } else { 0.0 };
        }
        (self.log_norm + (self.dim - 1.0) * z.ln() - 0.5 * z * z).exp()
    }

    /// Upper-tail probability `P(h > z)`.
    pub fn tail(&self, z: f64) -> f64 {
        gamma_ur(self.dim / 2.0, 0.5 * z * z)
    }

    /// `P(h <= z)`.
    pub fn cdf(&self, z: f64) -> f64 {
        gamma_lr(self.dim / 2.0, 0.5 * z * z)
    }

    /// Smallest `z` (to bisection precision) whose upper tail is below `mass`.
    pub fn support_end(&self, mass: f64) -> f64 {
        let mut hi = self.dim.sqrt() + 1.0;
        while self.tail(hi) >= mass {
            hi *= 1.5;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.tail(mid) >= mass {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        hi
    }

    fn quantile(&self, p: f64, z_max: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, z_max);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Adaptive Simpson integration of `(f(z), z f(z))` over `[a, b]`.
pub fn integrate_mass_and_moment(density: &GainDensity, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if b <= a {
        return (0.0, 0.0);
    }
    let eval = |z: f64| {
        let p = density.pdf(z);
        [p, z * p]
    };
    let fa = eval(a);
    let fb = eval(b);
    let m = 0.5 * (a + b);
    let fm = eval(m);
    let whole = simpson(a, b, fa, fm, fb);
    let out = adaptive(&eval, a, b, fa, fm, fb, whole, tol, 48);
    (out[0], out[1])
}

fn simpson(a: f64, b: f64, fa: [f64; 2], fm: [f64; 2], fb: [f64; 2]) -> [f64; 2] {
    let h = (b - a) / 6.0;
    [h * (fa[0] + 4.0 * fm[0] + fb[0]), h * (fa[1] + 4.0 * fm[1] + fb[1])]
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> [f64; 2]>(
    f: &F,
    a: f64,
    b: f64,
    fa: [f64; 2],
    fm: [f64; 2],
    fb: [f64; 2],
    whole: [f64; 2],
    tol: f64,
    depth: u32,
) -> [f64; 2] {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = [left[0] + right[0] - whole[0], left[1] + right[1] - whole[1]];
    if depth == 0 || (err[0].abs() <= 15.0 * tol && err[1].abs() <= 15.0 * tol) {
        return [left[0] + right[0] + err[0] / 15.0, left[1] + right[1] + err[1] / 15.0];
    }
    let l = adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
    let r = adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    [l[0] + r[0], l[1] + r[1]]
}

/// Lloyd-Max quantizer with `2^Q_h` levels for the gain density.
///
/// For `Q_h = 0` the single level is `E[h]`. Otherwise levels start at the
/// density's cell-midpoint quantiles and alternate centroid / midpoint updates
/// until the largest level moves by less than `1e-9` (or 10,000 iterations).
pub fn build_gain_codebook(dim: usize, gain_bits: u32) -> Result<GainCodebook> {
    if dim == 0 {
        return Err(Error::InvalidArgument("gain dimension must be >= 1".into()));
    }
    if gain_bits > MAX_GAIN_BITS {
        return Err(Error::InvalidArgument(format!("gain bits {gain_bits} exceed {MAX_GAIN_BITS}")));
    }
    if gain_bits == 0 {
        return Ok(GainCodebook::from_raw_parts(dim, 0, vec![gain_mean(dim)], Vec::new()));
    }
    let density = GainDensity::new(dim);
    let z_max = density.support_end(TAIL_MASS);
    let n = 1usize << gain_bits;
    let mut levels: Vec<f64> = (0..n).map(|i| density.quantile((i as f64 + 0.5) / n as f64, z_max)).collect();
    let mut boundaries = vec![0.0; n - 1];
    for _ in 0..MAX_ITERS {
        for (b, w) in boundaries.iter_mut().zip(levels.windows(2)) {
            *b = 0.5 * (w[0] + w[1]);
        }
        let mut max_change: f64 = 0.0;
        for i in 0..n {
            let a = if i == 0 { 0.0 } else { boundaries[i - 1] };
            let b = if i == n - 1 { z_max } else { boundaries[i] };
            let (mass, moment) = integrate_mass_and_moment(&density, a, b, SIMPSON_TOL);
            if mass > 0.0 {
                let c = (moment / mass).clamp(a, b);
                max_change = max_change.max((c - levels[i]).abs());
                levels[i] = c;
            }
        }
        if max_change < LEVEL_TOL {
            break;
        }
    }
    for (b, w) in boundaries.iter_mut().zip(levels.windows(2)) {
        *b = 0.5 * (w[0] + w[1]);
    }
    Ok(GainCodebook::from_raw_parts(dim, gain_bits, levels, boundaries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bits_is_the_mean() {
        let cb = build_gain_codebook(2, 0).unwrap();
        assert_eq!(cb.levels().len(), 1);
        assert!((cb.levels()[0] - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-12);
        assert!(cb.boundaries().is_empty());
        assert_eq!(cb.quantize(10.0).unwrap(), 0);
    }

    #[test]
    fn density_integrates_to_one() {
        for l in [1, 2, 5, 16] {
            let d = GainDensity::new(l);
            let (mass, mean) = integrate_mass_and_moment(&d, 0.0, d.support_end(1e-12), 1e-11);
            assert!((mass - 1.0).abs() < 1e-8, "L={l} mass={mass}");
            assert!((mean - gain_mean(l)).abs() < 1e-8, "L={l}");
        }
    }

    #[test]
    fn nearest_neighbor_and_ordering() {
        let cb = build_gain_codebook(4, 3).unwrap();
        let lv = cb.levels();
        assert_eq!(lv.len(), 8);
        for (i, b) in cb.boundaries().iter().enumerate() {
            assert!(lv[i] < *b && *b < lv[i + 1]);
            assert!((b - 0.5 * (lv[i] + lv[i + 1])).abs() < 1e-8);
        }
        assert!(lv[0] > 0.0);
    }

    #[test]
    fn quantize_edges() {
        let cb = build_gain_codebook(3, 2).unwrap();
        assert_eq!(cb.quantize(0.0).unwrap(), 0);
        for (k, &l) in cb.levels().iter().enumerate() {
            assert_eq!(cb.quantize(l).unwrap(), k);
        }
        let b0 = cb.boundaries()[0];
        assert_eq!(cb.quantize(b0).unwrap(), 0);
        assert!(matches!(cb.quantize(-1e-3), Err(Error::NegativeGain(_))));
        assert!(cb.quantize(f64::NAN).is_err());
    }

    #[test]
    fn rejects_too_many_bits() {
        assert!(build_gain_codebook(2, 17).is_err());
    }
}
