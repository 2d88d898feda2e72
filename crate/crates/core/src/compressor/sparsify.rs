use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Indices of the `s` largest-magnitude entries, in ascending index order.
///
/// Equal magnitudes keep the lower index. NaN entries sort as smallest.
pub fn top_s_indices(v: &[f64], s: usize) -> Vec<usize> {
    if s >= v.len() {
        return (0..v.len()).collect();
    }
    if s == 0 {
        return Vec::new();
    }
    let rank = |a: &usize, b: &usize| -> Ordering {
        let (x, y) = (v[*a].abs(), v[*b].abs());
        match y.partial_cmp(&x) {
            Some(Ordering::Equal) | None => {
                // NaN behaves as -inf so the order stays total
                match (x.is_nan(), y.is_nan()) {
                    (true, false) => Ordering::Greater,
                    (false, true) => Ordering::Less,
                    _ => a.cmp(b),
                }
            }
            Some(o) => o,
        }
    };
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.select_nth_unstable_by(s - 1, rank);
    idx.truncate(s);
    idx.sort_unstable();
    idx
}

/// `Sparse_S(v)`: keeps the `s` largest-magnitude entries and zeros the rest.
pub fn sparsify(v: &[f64], s: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in top_s_indices(v, s) {
        out[i] = v[i];
    }
    out
}

/// `||v - Sparse_S(v)||^2` for every `s` in `0..=v.len()`, from one sort.
pub fn truncation_energy_profile(v: &[f64]) -> Vec<f64> {
    let mut sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    sq.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut out = vec![0.0; v.len() + 1];
    for s in (0..v.len()).rev() {
        out[s] = out[s + 1] + sq[s];
    }
    out
}

/// Result of one error-feedback sparsification.
#[derive(Debug, Clone, PartialEq)]
pub struct Sparsified {
    /// `g + Delta_prev`
    pub accumulated: Vec<f64>,
    /// `Sparse_S(accumulated)`
    pub sparse: Vec<f64>,
    /// Indices of the kept entries, ascending.
    pub support: Vec<usize>,
}

impl Sparsified {
    pub fn nonzeros(&self) -> Vec<(usize, f64)> {
        self.support.iter().map(|&i| (i, self.sparse[i])).filter(|&(_, v)| v != 0.0).collect()
    }
}

/// Per-(device, block) error-feedback accumulator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualState {
    delta: Vec<f64>,
}

impl ResidualState {
    pub fn new(len: usize) -> Self {
        Self { delta: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn reset(&mut self) {
        self.delta.iter_mut().for_each(|x| *x = 0.0);
    }

    /// `g + Delta_prev`, without touching the state.
    pub fn accumulate(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.delta.len() {
            return Err(Error::DimensionMismatch { expected: self.delta.len(), got: g.len() });
        }
        Ok(g.iter().zip(&self.delta).map(|(a, b)| a + b).collect())
    }

    /// Sparsifies an already accumulated vector and stores `accumulated - sparse`.
    pub fn commit(&mut self, accumulated: Vec<f64>, s: usize) -> Result<Sparsified> {
        if accumulated.len() != self.delta.len() {
            return Err(Error::DimensionMismatch { expected: self.delta.len(), got: accumulated.len() });
        }
        if s > accumulated.len() {
            return Err(Error::SparsityTooLarge { sparsity: s, len: accumulated.len() });
        }
        let support = top_s_indices(&accumulated, s);
        let mut sparse = vec![0.0; accumulated.len()];
        self.delta.copy_from_slice(&accumulated);
        for &i in &support {
            sparse[i] = accumulated[i];
            self.delta[i] = 0.0;
        }
        Ok(Sparsified { accumulated, sparse, support })
    }

    pub fn sparsify(&mut self, g: &[f64], s: usize) -> Result<Sparsified> {
        let acc = self.accumulate(g)?;
        self.commit(acc, s)
    }
}

/// Functional form: returns `(g_tilde, Delta_new)` for `g` and `Delta_prev`.
pub fn sparsify_with_feedback(g: &[f64], residual: &[f64], s: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if s == 0 {
        return Err(Error::InvalidArgument("sparsity must be >= 1".into()));
    }
    let mut state = ResidualState { delta: residual.to_vec() };
    let out = state.sparsify(g, s)?;
    Ok((out.sparse, state.delta))
}
