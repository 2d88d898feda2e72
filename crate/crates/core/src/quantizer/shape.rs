//! Even Grassmannian shape codebooks.
//!
//! A codebook stores the "positive" half: `2^(Q_s - 1)` unit lines in `R^L`. The
//! full even codebook is that set together with its negation, so a shape code
//! is a line index plus a sign bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Largest supported line count exponent (`2^(Q_s - 1) <= 2^20`).
pub const MAX_LINES_LOG2: u32 = 20;

const UNIT_TOL: f64 = 1e-6;

/// Packing optimizer budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingBudget {
    /// Random codebooks drawn before refinement; the best one seeds the optimizer.
    pub restarts: usize,
    /// Gradient-ascent iterations on the soft-min objective.
    pub iterations: usize,
}

impl Default for PackingBudget {
    fn default() -> Self {
        Self { restarts: 64, iterations: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCodebook {
    dim: usize,
    bits: u32,
    /// Row-major `lines x dim`.
    lines: Vec<f64>,
    achieved_min_chordal: f64,
}

/// Sign attached to a decoded line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl ShapeCodebook {
    /// Wraps explicit lines; each row is re-normalized and the minimum chordal
    /// distance recomputed.
    pub fn from_lines(dim: usize, bits: u32, mut lines: Vec<f64>) -> Result<Self> {
        if dim == 0 || bits == 0 {
            return Err(Error::InvalidArgument("shape codebook needs dim >= 1 and bits >= 1".into()));
        }
        if bits - 1 > MAX_LINES_LOG2 {
            return Err(Error::CodebookTooLarge { lines_log2: bits - 1 });
        }
        let count = 1usize << (bits - 1);
        if lines.len() != count * dim {
            return Err(Error::DimensionMismatch { expected: count * dim, got: lines.len() });
        }
        for row in lines.chunks_exact_mut(dim) {
            let n = norm(row);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::ZeroVector);
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        let achieved_min_chordal = min_chordal_distance(&lines, dim);
        Ok(Self { dim, bits, lines, achieved_min_chordal })
    }

    pub(crate) fn from_raw_parts(dim: usize, bits: u32, lines: Vec<f64>, achieved_min_chordal: f64) -> Self {
        Self { dim, bits, lines, achieved_min_chordal }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.lines.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn line(&self, i: usize) -> &[f64] {
        &self.lines[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lines_flat(&self) -> &[f64] {
        &self.lines
    }

    pub fn achieved_min_chordal(&self) -> f64 {
        self.achieved_min_chordal
    }

    /// Nearest member of the even codebook to a unit vector.
    pub fn quantize(&self, s: &[f64]) -> Result<(usize, Sign)> {
        if s.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: s.len() });
        }
        let n = norm(s);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnitNorm { norm: n });
        }
        Ok(self.nearest(s))
    }

    /// [`quantize`](Self::quantize) without the unit-norm check. Maximizing `|c.s|`
    /// is scale invariant, so any nonzero direction works.
    pub fn nearest(&self, s: &[f64]) -> (usize, Sign) {
        let mut best = 0;
        let mut best_abs = f64::NEG_INFINITY;
        let mut best_ip = 0.0;
        for (i, row) in self.lines.chunks_exact(self.dim).enumerate() {
            let ip = dot(row, s);
            if ip.abs() > best_abs {
                best_abs = ip.abs();
                best_ip = ip;
                best = i;
            }
        }
        let sign = if best_ip < 0.0 { Sign::Minus } else { Sign::Plus };
        (best, sign)
    }

    /// `sign * lines[index]` written into `out`.
    pub fn decode_into(&self, index: usize, sign: Sign, out: &mut [f64]) {
        let s = sign.as_f64();
        for (o, c) in out.iter_mut().zip(self.line(index)) {
            *o = s * c;
        }
    }
}

/// Chordal distance `sqrt(1 - (a.b)^2)` between two lines through unit vectors.
pub fn chordal_distance(a: &[f64], b: &[f64]) -> f64 {
    let ip = dot(a, b);
    (1.0 - ip * ip).max(0.0).sqrt()
}

/// Minimum pairwise chordal distance; 1 for a singleton.
pub fn min_chordal_distance(lines: &[f64], dim: usize) -> f64 {
    let max_ip2 = max_coherence_sq(lines, dim);
    (1.0 - max_ip2).max(0.0).sqrt()
}

fn max_coherence_sq(lines: &[f64], dim: usize) -> f64 {
    let n = lines.len() / dim;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let a = &lines[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let ip = dot(a, &lines[j * dim..(j + 1) * dim]);
            worst = worst.max(ip * ip);
        }
    }
    worst.min(1.0)
}

fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        loop {
            let row: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let r = norm(&row);
            if r > 1e-12 {
                out.extend(row.iter().map(|x| x / r));
                break;
            }
        }
    }
    out
}

/// Builds a max-min chordal packing of `2^(Q_s - 1)` lines in `R^L`.
///
/// The best of `budget.restarts` random codebooks is refined by projected
/// gradient descent on a log-sum-exp soft maximum of the squared pairwise
/// coherences `(c_i . c_j)^2`, with the temperature annealed geometrically and
/// every line re-normalized after each step. The best iterate seen is returned,
/// so the result is never worse than the seeding random codebook.
pub fn build_shape_codebook(dim: usize, shape_bits: u32, seed: u64, budget: PackingBudget) -> Result<ShapeCodebook> {
    if dim == 0 {
        return Err(Error::InvalidArgument("shape dimension must be >= 1".into()));
    }
    if shape_bits == 0 {
        return Err(Error::InvalidArgument("shape codebook needs at least one bit".into()));
    }
    if shape_bits - 1 > MAX_LINES_LOG2 {
        return Err(Error::CodebookTooLarge { lines_log2: shape_bits - 1 });
    }
    let n = 1usize << (shape_bits - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_4150_4543_4231);
    rng.set_stream(((dim as u64) << 32) | shape_bits as u64);

    if n == 1 {
        let mut line = vec![0.0; dim];
        line[0] = 1.0;
        return Ok(ShapeCodebook::from_raw_parts(dim, shape_bits, line, 1.0));
    }
    if dim == 1 {
        // Every 1-D line is the same line; no packing to optimize.
        return Ok(ShapeCodebook::from_raw_parts(dim, shape_bits, vec![1.0; n], 0.0));
    }

    let mut best = random_unit_rows(&mut rng, n, dim);
    let mut best_coh = max_coherence_sq(&best, dim);
    for _ in 1..budget.restarts.max(1) {
        let cand = random_unit_rows(&mut rng, n, dim);
        let coh = max_coherence_sq(&cand, dim);
        if coh < best_coh {
            best = cand;
            best_coh = coh;
        }
    }

    refine_packing(&mut best, &mut best_coh, n, dim, budget.iterations);
    let min_chordal = (1.0 - best_coh).max(0.0).sqrt();
    Ok(ShapeCodebook::from_raw_parts(dim, shape_bits, best, min_chordal))
}

fn refine_packing(best: &mut [f64], best_coh: &mut f64, n: usize, dim: usize, iterations: usize) {
    if iterations == 0 {
        return;
    }
    let mut cur = best.to_vec();
    let mut grad = vec![0.0; n * dim];
    let temp_start = 0.05f64;
    let temp_end = 1e-7f64;
    let step_start = 0.05f64;
    let step_end = 1e-6f64;
    for it in 0..iterations {
        let frac = it as f64 / (iterations.max(2) - 1) as f64;
        let temp = temp_start * (temp_end / temp_start).powf(frac);
        let step = step_start * (step_end / step_start).powf(frac);

        let max_p = max_coherence_sq(&cur, dim);
        if max_p < *best_coh {
            *best_coh = max_p;
            best.copy_from_slice(&cur);
        }

        // d/dc_i of temp * log sum exp(p_ij / temp) = sum_j w_ij 2 g_ij c_j
        grad.iter_mut().for_each(|g| *g = 0.0);
        let cutoff = max_p - 40.0 * temp;
        for i in 0..n {
            for j in (i + 1)..n {
                let ip = dot(&cur[i * dim..(i + 1) * dim], &cur[j * dim..(j + 1) * dim]);
                let p = ip * ip;
                if p < cutoff {
                    continue;
                }
                let w = ((p - max_p) / temp).exp() * 2.0 * ip;
                for k in 0..dim {
                    grad[i * dim + k] += w * cur[j * dim + k];
                    grad[j * dim + k] += w * cur[i * dim + k];
                }
            }
        }
        // Project onto the tangent space of each sphere and normalize the step so
        // the largest line moves by `step`.
        let mut max_g: f64 = 0.0;
        for i in 0..n {
            let c = &cur[i * dim..(i + 1) * dim];
            let g = &mut grad[i * dim..(i + 1) * dim];
            let radial = dot(g, c);
            for (gk, ck) in g.iter_mut().zip(c) {
                *gk -= radial * ck;
            }
            max_g = max_g.max(norm(g));
        }
        if max_g <= 0.0 {
            break;
        }
        let scale = step / max_g;
        for i in 0..n {
            let row = &mut cur[i * dim..(i + 1) * dim];
            for (ck, gk) in row.iter_mut().zip(&grad[i * dim..(i + 1) * dim]) {
                *ck -= scale * gk;
            }
            let r = norm(row);
            row.iter_mut().for_each(|x| *x /= r);
        }
    }
    let final_coh = max_coherence_sq(&cur, dim);
    if final_coh < *best_coh {
        *best_coh = final_coh;
        best.copy_from_slice(&cur);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> PackingBudget {
        PackingBudget { restarts: 64, iterations: 300 }
    }

    #[test]
    fn singleton_codebook() {
        let cb = build_shape_codebook(2, 1, 7, quick()).unwrap();
        assert_eq!(cb.len(), 1);
        assert_eq!(cb.achieved_min_chordal(), 1.0);
        assert!((norm(cb.line(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_lines_in_plane_are_orthogonal() {
        let cb = build_shape_codebook(2, 2, 7, quick()).unwrap();
        assert!((cb.achieved_min_chordal() - 1.0).abs() < 1e-6, "{}", cb.achieved_min_chordal());
    }

    #[test]
    fn guard_rejects_huge_codebooks() {
        assert_eq!(build_shape_codebook(4, 22, 0, quick()), Err(Error::CodebookTooLarge { lines_log2: 21 }));
    }

    #[test]
    fn identity_and_negation() {
        let cb = build_shape_codebook(4, 5, 1, quick()).unwrap();
        let l0 = cb.line(0).to_vec();
        assert_eq!(cb.quantize(&l0).unwrap(), (0, Sign::Plus));
        let neg: Vec<f64> = l0.iter().map(|x| -x).collect();
        assert_eq!(cb.quantize(&neg).unwrap(), (0, Sign::Minus));
    }

    #[test]
    fn rejects_non_unit_input() {
        let cb = build_shape_codebook(3, 3, 1, quick()).unwrap();
        assert!(matches!(cb.quantize(&[1.0, 1.0, 0.0]), Err(Error::NotUnitNorm { .. })));
    }

    #[test]
    fn stored_invariants_hold() {
        let cb = build_shape_codebook(3, 5, 3, quick()).unwrap();
        assert_eq!(cb.len(), 16);
        for i in 0..cb.len() {
            assert!((norm(cb.line(i)) - 1.0).abs() < 1e-9);
        }
        let mut min_d: f64 = 1.0;
        for i in 0..cb.len() {
            for j in (i + 1)..cb.len() {
                min_d = min_d.min(chordal_distance(cb.line(i), cb.line(j)));
            }
        }
        assert!((min_d - cb.achieved_min_chordal()).abs() < 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = build_shape_codebook(4, 6, 11, quick()).unwrap();
        let b = build_shape_codebook(4, 6, 11, quick()).unwrap();
        assert_eq!(a, b);
        let c = build_shape_codebook(4, 6, 12, quick()).unwrap();
        assert_ne!(a.lines_flat(), c.lines_flat());
    }
}
