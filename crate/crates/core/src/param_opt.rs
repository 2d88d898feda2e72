//! Local selection of the dimensionality-reduction ratio, sparsity and bit split.

use serde::{Deserialize, Serialize};

use crate::compressor::CompressionParams;
use crate::error::{Error, Result};
use crate::quantizer::{optimal_bit_allocation, BitAllocation};

/// Largest codebook footprint `L 2^Q_s` allowed by the subvector-dimension rule.
pub const CODEBOOK_FOOTPRINT_LOG2: u32 = 15;
pub const DEFAULT_DIM_CEILING: usize = 64;

/// Ratios every device and the server agree on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRatios {
    values: Vec<f64>,
}

impl CandidateRatios {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("candidate set is empty".into()));
        }
        if values.iter().any(|r| !r.is_finite() || *r < 1.0) {
            return Err(Error::InvalidArgument("candidate ratios must be finite and >= 1".into()));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, r: f64) -> Option<usize> {
        self.values.iter().position(|&v| v == r)
    }
}

impl Default for CandidateRatios {
    /// `{1.5 + 0.25 r : r = 0..6}`
    fn default() -> Self {
        Self { values: (0..=6).map(|r| 1.5 + 0.25 * r as f64).collect() }
    }
}

/// `Q* = C R`.
pub fn optimal_q(capacity: f64, ratio: f64) -> f64 {
    capacity * ratio
}

/// Largest `S >= 1` with `R < N / (2 K' S ln(N / (K' S)))`.
///
/// Only the regime `N / (K' S) >= e` is searched; below it the logarithmic
/// factor shrinks and the inequality holds again for dense supports, which is
/// outside the phase-transition approximation.
pub fn max_sparsity(n: usize, group_cap: usize, ratio: f64) -> Result<usize> {
    if n < 2 || group_cap == 0 || ratio < 1.0 {
        return Err(Error::InvalidArgument(format!("max_sparsity(N={n}, K'={group_cap}, R={ratio})")));
    }
    let feasible = |s: usize| {
        let ks = (group_cap * s) as f64;
        let u = n as f64 / ks;
        u >= std::f64::consts::E && ratio < n as f64 / (2.0 * ks * u.ln())
    };
    // The right-hand side decreases in S on the searched regime, so scan upward.
    let mut best = None;
    let mut s = 1;
    while group_cap * s < n && feasible(s) {
        best = Some(s);
        s += 1;
    }
    best.ok_or(Error::InfeasibleSparsity { ratio })
}

/// Largest `L <= ceiling` with `L 2^(Q_s(L)) <= 2^15`; `None` from the
/// callback marks `L` as unusable. Falls back to 1.
pub fn subvector_dim(ceiling: usize, shape_bits_for: impl Fn(usize) -> Option<u32>) -> usize {
    for l in (1..=ceiling.max(1)).rev() {
        if let Some(qs) = shape_bits_for(l) {
            if qs <= CODEBOOK_FOOTPRINT_LOG2 && (l as u64) << qs <= 1u64 << CODEBOOK_FOOTPRINT_LOG2 {
                return l;
            }
        }
    }
    1
}

/// How the subvector dimension is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimPolicy {
    /// The largest dimension satisfying the codebook footprint rule.
    Auto {
        ceiling: usize,
    },
    Fixed(usize),
}

impl Default for DimPolicy {
    fn default() -> Self {
        DimPolicy::Auto { ceiling: DEFAULT_DIM_CEILING }
    }
}

/// Static inputs of the per-device parameter search for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockContext {
    /// Block length `N`.
    pub n: usize,
    /// Model entries carried by the block (`N` unless the block is padded).
    pub entries: usize,
    /// Group-size cap `K'`.
    pub group_cap: usize,
    pub dim_policy: DimPolicy,
}

impl BlockContext {
    pub fn new(n: usize, group_cap: usize) -> Self {
        Self { n, entries: n, group_cap, dim_policy: DimPolicy::default() }
    }
}

fn allocation_for(dim: usize, q: f64) -> Option<BitAllocation> {
    if (q * dim as f64 + 1e-9).floor() < 1.0 {
        return None;
    }
    optimal_bit_allocation(dim, q).ok()
}

/// Everything derived from `(C, R)` for one block, before seeing the data.
pub fn ratio_params(ctx: &BlockContext, capacity: f64, ratio: f64) -> Result<(CompressionParams, BitAllocation)> {
    if capacity <= 0.0 || !capacity.is_finite() {
        return Err(Error::InvalidArgument(format!("capacity {capacity} must be positive")));
    }
    let q = optimal_q(capacity, ratio);
    let sparsity = max_sparsity(ctx.n, ctx.group_cap, ratio)?;
    let dim = match ctx.dim_policy {
        DimPolicy::Fixed(l) => l,
        DimPolicy::Auto { ceiling } => subvector_dim(ceiling, |l| allocation_for(l, q).map(|a| a.shape_bits)),
    };
    let alloc = allocation_for(dim, q).ok_or(Error::NoFeasibleRatio)?;
    let rounded = (ctx.n as f64 / ratio).round() as usize;
    let mut subvectors = rounded.min(ctx.n) / dim;
    let per_sub = u64::from(alloc.shape_bits + alloc.gain_bits);
    // Rounding M to the nearest integer can overshoot C * (entries) by a field.
    let budget = capacity * ctx.entries as f64;
    while subvectors > 0 && (subvectors as u64 * per_sub) as f64 > budget + 1e-9 {
        subvectors -= 1;
    }
    if subvectors == 0 {
        return Err(Error::NoFeasibleRatio);
    }
    let params = CompressionParams {
        capacity,
        ratio,
        bits_per_entry: q,
        sparsity,
        rows: subvectors * dim,
        dim,
        subvectors,
        shape_bits: alloc.shape_bits,
        gain_bits: alloc.gain_bits,
    };
    Ok((params, alloc))
}

/// Local surrogate objective of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: CompressionParams,
    pub modeled_mse: f64,
    /// `||g_bar - Sparse_S(g_bar)||^2`
    pub sparsification_term: f64,
    /// `K' S R sigma^2 / (N L alpha^2)` with `R = N / M`.
    pub reconstruction_term: f64,
}

impl CandidateScore {
    pub fn objective(&self) -> f64 {
        self.sparsification_term + self.reconstruction_term
    }
}

/// Outcome of the local ratio selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSelection {
    pub chosen: CandidateScore,
    /// Scores of all feasible candidates, in ascending `R`.
    pub scored: Vec<CandidateScore>,
}

/// Squared magnitudes sorted descending and their prefix sums, shared by all candidates.
#[derive(Debug, Clone)]
pub struct EnergyProfile {
    prefix: Vec<f64>,
    suffix: Vec<f64>,
}

impl EnergyProfile {
    pub fn new(gbar: &[f64]) -> Self {
        let mut sq: Vec<f64> = gbar.iter().map(|x| x * x).collect();
        sq.sort_unstable_by(|a, b| b.total_cmp(a));
        let mut prefix = vec![0.0; sq.len() + 1];
        let mut suffix = vec![0.0; sq.len() + 1];
        for i in 0..sq.len() {
            prefix[i + 1] = prefix[i] + sq[i];
        }
        // accumulated from the small end so a tiny tail keeps its precision
        for i in (0..sq.len()).rev() {
            suffix[i] = suffix[i + 1] + sq[i];
        }
        Self { prefix, suffix }
    }

    /// `||Sparse_S(g)||^2`
    pub fn kept(&self, s: usize) -> f64 {
        self.prefix[s.min(self.prefix.len() - 1)]
    }

    /// `||g - Sparse_S(g)||^2`
    pub fn dropped(&self, s: usize) -> f64 {
        self.suffix[s.min(self.suffix.len() - 1)]
    }
}

/// Scores one candidate ratio on a block.
pub fn score_candidate(
    ctx: &BlockContext,
    profile: &EnergyProfile,
    capacity: f64,
    ratio: f64,
) -> Result<CandidateScore> {
    let (params, alloc) = ratio_params(ctx, capacity, ratio)?;
    let kept = profile.kept(params.sparsity);
    let effective_ratio = ctx.n as f64 / params.rows as f64;
    // 1 / alpha^2 = ||Sparse_S(g)||^2
    let reconstruction_term =
        ctx.group_cap as f64 * params.sparsity as f64 * effective_ratio * alloc.modeled_mse * kept
            / (ctx.n as f64 * params.dim as f64);
    Ok(CandidateScore {
        params,
        modeled_mse: alloc.modeled_mse,
        sparsification_term: profile.dropped(params.sparsity),
        reconstruction_term,
    })
}

/// Picks the candidate ratio minimizing the local surrogate; ties go to the smaller ratio.
pub fn select_ratio(
    gbar: &[f64],
    capacity: f64,
    ctx: &BlockContext,
    candidates: &CandidateRatios,
) -> Result<RatioSelection> {
    if gbar.len() != ctx.n {
        return Err(Error::DimensionMismatch { expected: ctx.n, got: gbar.len() });
    }
    let profile = EnergyProfile::new(gbar);
    let scored: Vec<CandidateScore> =
        candidates.values().iter().filter_map(|&r| score_candidate(ctx, &profile, capacity, r).ok()).collect();
    let mut best: Option<&CandidateScore> = None;
    for c in &scored {
        if best.is_none_or(|b| c.objective() < b.objective()) {
            best = Some(c);
        }
    }
    let chosen = *best.ok_or(Error::NoFeasibleRatio)?;
    Ok(RatioSelection { chosen, scored })
}
