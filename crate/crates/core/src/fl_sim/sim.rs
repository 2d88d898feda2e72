use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::mlp::Mlp;
use super::partition::{partition_dataset, DevicePartition};
use super::training::{global_update, local_update, GlobalOptimizer, OptimizerState};
use crate::compressor::{
    decode_payload, encode_payload, project, quantize_projection, CompressionParams, ProjectionBank, ResidualState,
    Sensing,
};
use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::par;
use crate::param_opt::{ratio_params, select_ratio, BlockContext, CandidateRatios, DimPolicy};
use crate::quantizer::CodebookBank;
use crate::reconstructor::{
    aggregate_group, assign_groups, nmse, recover_group, BoundTerm, DeviceObservation, GroupProblem, RecoveryAlgorithm,
    RecoveryRecord, RecoverySettings, StepPolicy,
};
use crate::rng::{stream, Domain};

/// Per-device link capacities in bits per model entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacitySpec {
    Homogeneous(f64),
    /// Each device draws its capacity uniformly from the set once, at setup.
    Set(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioPolicy {
    /// Local surrogate minimization over the candidate set.
    Optimized,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressionMode {
    /// Uncompressed, error-free updates.
    Off,
    VqCs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerMode {
    ShapeGain,
    /// Projections reach the server unquantized; bits are still accounted.
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// One sensing matrix per block for the whole run.
    Fixed,
    /// Matrices re-derived every round from `(seed, round, block)`.
    PerRound,
}

/// Where local updates come from.
#[derive(Debug, Clone)]
pub enum Workload {
    Training {
        train: Arc<Dataset>,
        test: Arc<Dataset>,
    },
    /// Bernoulli-Gaussian updates with the given nonzero rate; no model is trained.
    Synthetic {
        params: usize,
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub devices: usize,
    pub rounds: usize,
    pub local_iters: usize,
    pub batch: usize,
    pub local_lr: f64,
    pub optimizer: GlobalOptimizer,
    pub blocks: usize,
    pub group_cap: usize,
    pub candidates: CandidateRatios,
    pub capacity: CapacitySpec,
    pub ratio_policy: RatioPolicy,
    pub compression: CompressionMode,
    pub quantizer: QuantizerMode,
    /// Replaces the sparsity derived from the ratio.
    pub sparsity_override: Option<usize>,
    pub dim_policy: DimPolicy,
    pub recovery: RecoverySettings,
    pub projection: ProjectionMode,
    pub seed: u64,
    pub samples_per_device: usize,
    pub classes_per_device: usize,
    pub hidden: usize,
    /// Record wall-clock timings (makes outputs run-dependent).
    pub timing: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            devices: 15,
            rounds: 30,
            local_iters: 3,
            batch: 10,
            local_lr: 0.01,
            optimizer: GlobalOptimizer::Sgd { lr: 0.1 },
            blocks: 10,
            group_cap: 3,
            candidates: CandidateRatios::default(),
            capacity: CapacitySpec::Homogeneous(0.1),
            ratio_policy: RatioPolicy::Optimized,
            compression: CompressionMode::VqCs,
            quantizer: QuantizerMode::ShapeGain,
            sparsity_override: None,
            dim_policy: DimPolicy::default(),
            recovery: RecoverySettings::new(RecoveryAlgorithm::Gamp),
            projection: ProjectionMode::Fixed,
            seed: 1,
            samples_per_device: 500,
            classes_per_device: 2,
            hidden: 20,
            timing: false,
        }
    }
}

/// Split of a flat `N_bar` vector into `B` blocks of length `N`, the last one zero-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub total: usize,
    pub blocks: usize,
    pub block_len: usize,
}

impl BlockLayout {
    pub fn new(total: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || total == 0 {
            return Err(Error::InvalidArgument("need at least one block and one parameter".into()));
        }
        let block_len = total.div_ceil(blocks);
        if (blocks - 1) * block_len >= total {
            return Err(Error::InvalidArgument(format!("{total} parameters cannot fill {blocks} blocks")));
        }
        Ok(Self { total, blocks, block_len })
    }

    /// Real (unpadded) entries of block `b`.
    pub fn entries(&self, b: usize) -> usize {
        let start = b * self.block_len;
        (self.total - start).min(self.block_len)
    }

    pub fn block(&self, v: &[f64], b: usize) -> Vec<f64> {
        let start = b * self.block_len;
        let mut out = vec![0.0; self.block_len];
        let e = self.entries(b);
        out[..e].copy_from_slice(&v[start..start + e]);
        out
    }

    pub fn concatenate(&self, blocks: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for (b, blk) in blocks.iter().enumerate() {
            out.extend_from_slice(&blk[..self.entries(b)]);
        }
        out
    }
}

/// Parameters chosen by one device for one block in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub round: usize,
    pub device: usize,
    pub block: usize,
    pub capacity: f64,
    pub ratio: f64,
    pub bits_per_entry: f64,
    pub sparsity: usize,
    pub rows: usize,
    pub dim: usize,
    pub subvectors: usize,
    pub shape_bits: u32,
    pub gain_bits: u32,
    pub modeled_mse: f64,
    pub payload_bits: u64,
}

/// Per-round summary; the first seven fields form the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub train_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub bits_per_entry: f64,
    pub mean_block_nmse: f64,
    /// Mean over groups of the reconstruction bound normalized by the group's aggregate energy.
    pub mean_bound: f64,
    pub wall_time_ms: f64,
}

/// Diagnostics that are not part of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    /// Transmitted bits per device.
    pub device_bits: Vec<u64>,
    /// Bits each device would send at exactly `(P (Q_s + Q_h) + 32)` per block.
    pub expected_bits: Vec<u64>,
    /// `C_k N_bar + 32 B` per device.
    pub capacity_bits: Vec<f64>,
    /// Entries where `g + Delta_prev` and `g_tilde + Delta_new` differ bitwise.
    pub feedback_violations: usize,
    /// Group recoveries that fell back from GAMP to IHT.
    pub recovery_fallbacks: usize,
    /// `||g_tilde_K - g_hat_K||^2 / ||sum_k rho_k g_k||^2`
    pub reconstruction_error_ratio: f64,
    /// Largest `rho / alpha` spread in any group.
    pub worst_conditioning: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub metrics: RoundMetrics,
    pub diagnostics: RoundDiagnostics,
    pub selections: Vec<SelectionRecord>,
    pub recovery: Vec<RecoveryRecord>,
    /// The global update applied this round.
    pub global_update: Vec<f64>,
}

#[derive(Debug, Clone)]
struct DeviceBlock {
    params: CompressionParams,
    modeled_mse: f64,
    alpha: f32,
    x_hat: Vec<f64>,
    sparse: Vec<f64>,
    truncation_energy: f64,
    payload_bits: u64,
    violations: usize,
}

/// Deterministic FedVQCS simulator.
pub struct Simulation {
    cfg: SimConfig,
    model: Option<Mlp>,
    workload: Workload,
    partitions: Vec<DevicePartition>,
    capacities: Vec<f64>,
    weights: Vec<f64>,
    layout: BlockLayout,
    w: Vec<f64>,
    opt_state: OptimizerState,
    residuals: Vec<Vec<ResidualState>>,
    codebooks: Arc<CodebookBank>,
    projections: Option<ProjectionBank>,
    op_norms: Mutex<HashMap<(u64, usize, usize), f64>>,
    round: usize,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation").field("round", &self.round).field("layout", &self.layout).finish()
    }
}

fn draw_capacities(cfg: &SimConfig) -> Result<Vec<f64>> {
    match &cfg.capacity {
        CapacitySpec::Homogeneous(c) => Ok(vec![*c; cfg.devices]),
        CapacitySpec::Set(set) => {
            if set.is_empty() {
                return Err(Error::InvalidArgument("empty capacity set".into()));
            }
            let mut rng = stream(cfg.seed, Domain::Capacity, 0, 0);
            Ok((0..cfg.devices).map(|_| set[rng.random_range(0..set.len())]).collect())
        }
    }
}

impl Simulation {
    pub fn new(cfg: SimConfig, workload: Workload, codebooks: Arc<CodebookBank>) -> Result<Self> {
        if cfg.devices == 0 || cfg.group_cap == 0 {
            return Err(Error::InvalidArgument("devices and group cap must be positive".into()));
        }
        let capacities = draw_capacities(&cfg)?;
        let (model, partitions, w) = match &workload {
            Workload::Training { train, test } => {
                if train.dim() != test.dim() || train.classes() != test.classes() {
                    return Err(Error::Dataset("train and test sets disagree in shape".into()));
                }
                let model = Mlp::new(train.dim(), cfg.hidden, train.classes());
                let mut prng = stream(cfg.seed, Domain::Partition, 0, 0);
                let parts = partition_dataset(
                    train.labels(),
                    train.classes(),
                    cfg.devices,
                    cfg.samples_per_device,
                    cfg.classes_per_device,
                    &mut prng,
                )?;
                let w = model.init(&mut stream(cfg.seed, Domain::ModelInit, 0, 0));
                (Some(model), parts, w)
            }
            Workload::Synthetic { params, rate } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::InvalidArgument(format!("synthetic rate {rate}")));
                }
                (None, Vec::new(), vec![0.0; *params])
            }
        };
        // Equal local dataset sizes make every weight 1 / K.
        let sizes: Vec<f64> = if partitions.is_empty() {
            vec![1.0; cfg.devices]
        } else {
            partitions.iter().map(|p| p.indices.len() as f64).collect()
        };
        let total: f64 = sizes.iter().sum();
        let weights = sizes.iter().map(|s| s / total).collect();
        let layout = BlockLayout::new(w.len(), cfg.blocks)?;
        let residuals = vec![vec![ResidualState::new(layout.block_len); cfg.blocks]; cfg.devices];
        let projections = match cfg.compression {
            CompressionMode::Off => None,
            CompressionMode::VqCs => {
                let max_rows = Self::max_rows(&cfg, &capacities, layout)?;
                Some(ProjectionBank::new(cfg.seed, layout.block_len, max_rows)?)
            }
        };
        Ok(Self {
            cfg,
            model,
            workload,
            partitions,
            capacities,
            weights,
            layout,
            w,
            opt_state: OptimizerState::default(),
            residuals,
            codebooks,
            projections,
            op_norms: Mutex::default(),
            round: 0,
        })
    }

    fn block_context(cfg: &SimConfig, layout: BlockLayout, b: usize) -> BlockContext {
        BlockContext {
            n: layout.block_len,
            entries: layout.entries(b),
            group_cap: cfg.group_cap,
            dim_policy: cfg.dim_policy,
        }
    }

    fn max_rows(cfg: &SimConfig, capacities: &[f64], layout: BlockLayout) -> Result<usize> {
        let ratios: Vec<f64> = match cfg.ratio_policy {
            RatioPolicy::Fixed(r) => vec![r],
            RatioPolicy::Optimized => cfg.candidates.values().to_vec(),
        };
        let mut best = 0;
        let mut distinct: Vec<f64> = capacities.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for b in 0..layout.blocks {
            let ctx = Self::block_context(cfg, layout, b);
            for &c in &distinct {
                for &r in &ratios {
                    if let Ok((p, _)) = ratio_params(&ctx, c, r) {
                        best = best.max(p.rows);
                    }
                }
            }
        }
        if best == 0 {
            return Err(Error::NoFeasibleRatio);
        }
        Ok(best)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.w
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn partitions(&self) -> &[DevicePartition] {
        &self.partitions
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn residual(&self, device: usize, block: usize) -> &ResidualState {
        &self.residuals[device][block]
    }

    /// Loss over all device samples and test accuracy of the current model.
    pub fn evaluate(&self) -> (Option<f64>, Option<f64>) {
        match (&self.workload, &self.model) {
            (Workload::Training { train, test }, Some(model)) => {
                let all: Vec<usize> = self.partitions.iter().flat_map(|p| p.indices.iter().copied()).collect();
                let (loss, _) = model.evaluate(&self.w, train, Some(&all));
                let (_, acc) = model.evaluate(&self.w, test, None);
                (Some(loss), Some(acc))
            }
            _ => (None, None),
        }
    }

    fn local_updates(&self, round: usize) -> Result<Vec<Vec<f64>>> {
        match (&self.workload, &self.model) {
            (Workload::Training { train, .. }, Some(model)) => par::map_range(self.cfg.devices, |k| {
                let mut rng = stream(self.cfg.seed, Domain::LocalSgd, round as u64, k as u64);
                local_update(
                    model,
                    &self.w,
                    train,
                    &self.partitions[k],
                    self.cfg.local_iters,
                    self.cfg.batch,
                    self.cfg.local_lr,
                    &mut rng,
                )
            })
            .into_iter()
            .collect(),
            (Workload::Synthetic { params, rate }, _) => Ok(par::map_range(self.cfg.devices, |k| {
                let mut rng = stream(self.cfg.seed, Domain::Synthetic, round as u64, k as u64);
                (0..*params)
                    .map(|_| if rng.random::<f64>() < *rate { rng.sample(StandardNormal) } else { 0.0 })
                    .collect()
            })),
            _ => Err(Error::InvalidArgument("training workload without a model".into())),
        }
    }

    fn epoch(&self, round: usize) -> u64 {
        match self.cfg.projection {
            ProjectionMode::Fixed => 0,
            ProjectionMode::PerRound => round as u64,
        }
    }

    fn op_norm(&self, epoch: u64, block: usize, sensing: &Sensing) -> f64 {
        let key = (epoch, block, sensing.rows());
        if let Some(v) = self.op_norms.lock().expect("op norm cache").get(&key) {
            return *v;
        }
        let v = sensing.view().op_norm_sq(100);
        self.op_norms.lock().expect("op norm cache").insert(key, v);
        v
    }

    fn compress_device(
        &self,
        k: usize,
        update: &[f64],
        residuals: &mut [ResidualState],
        epoch: u64,
    ) -> Result<Vec<DeviceBlock>> {
        let bank = self.projections.as_ref().expect("compression enabled");
        let capacity = self.capacities[k];
        let mut out = Vec::with_capacity(self.layout.blocks);
        for (b, residual) in residuals.iter_mut().enumerate() {
            let ctx = Self::block_context(&self.cfg, self.layout, b);
            let g = self.layout.block(update, b);
            let acc = residual.accumulate(&g)?;
            let (mut params, modeled_mse) = match self.cfg.ratio_policy {
                RatioPolicy::Fixed(r) => {
                    let (p, a) = ratio_params(&ctx, capacity, r)?;
                    (p, a.modeled_mse)
                }
                RatioPolicy::Optimized => {
                    let sel = select_ratio(&acc, capacity, &ctx, &self.cfg.candidates)?;
                    (sel.chosen.params, sel.chosen.modeled_mse)
                }
            };
            if let Some(s) = self.cfg.sparsity_override {
                params.sparsity = s.min(ctx.n);
            }
            let prev = residual.delta().to_vec();
            let sparsified = residual.commit(acc, params.sparsity)?;
            let violations = g
                .iter()
                .zip(&prev)
                .zip(sparsified.sparse.iter().zip(residual.delta()))
                .filter(|((gi, pi), (si, di))| (*gi + *pi).to_bits() != (*si + *di).to_bits())
                .count();
            let truncation_energy = norm_sq(residual.delta());
            let sensing = Sensing::new(bank.rows(epoch, b), params.rows)?;
            let (x, alpha) = project(&sparsified.nonzeros(), sensing.view());
            let (alpha, x_hat, modeled_mse) = match self.cfg.quantizer {
                QuantizerMode::Ideal => (alpha, x, 0.0),
                QuantizerMode::ShapeGain => {
                    let q = self.codebooks.quantizer(params.dim, params.shape_bits, params.gain_bits)?;
                    let codes = if alpha == 0.0 {
                        vec![Default::default(); params.subvectors]
                    } else {
                        quantize_projection(&x, &q)?
                    };
                    let wire = encode_payload(alpha, &codes, params.shape_bits, params.gain_bits)?;
                    let received = decode_payload(&wire, params.subvectors, params.shape_bits, params.gain_bits)?;
                    let obs = DeviceObservation::from_payload(&received, &q, 1.0, modeled_mse)?;
                    (obs.alpha, obs.x_hat, modeled_mse)
                }
            };
            out.push(DeviceBlock {
                params,
                modeled_mse,
                alpha,
                x_hat,
                sparse: sparsified.sparse,
                truncation_energy,
                payload_bits: params.payload_bits(),
                violations,
            });
        }
        Ok(out)
    }

    fn reconstruct_block(
        &self,
        round: usize,
        b: usize,
        epoch: u64,
        blocks: &[Vec<DeviceBlock>],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<RecoveryRecord>, Vec<f64>, usize, f64)> {
        let bank = self.projections.as_ref().expect("compression enabled");
        let n = self.layout.block_len;
        let members: Vec<(usize, f64, usize)> =
            (0..self.cfg.devices).map(|k| (k, blocks[k][b].params.ratio, blocks[k][b].params.rows)).collect();
        let plan = assign_groups(&members, self.cfg.group_cap);
        let mut estimate = vec![0.0; n];
        let mut truth = vec![0.0; n];
        let mut records = Vec::with_capacity(plan.len());
        let mut normalized_bounds = Vec::with_capacity(plan.len());
        let mut fallbacks = 0;
        let mut worst_cond: f64 = 1.0;
        for (gi, group) in plan.groups.iter().enumerate() {
            let start = self.cfg.timing.then(Instant::now);
            let sensing = Sensing::new(bank.rows(epoch, b), group.rows)?;
            let mut obs = Vec::with_capacity(group.members.len());
            let mut group_truth = vec![0.0; n];
            let mut support_mask = vec![false; n];
            let mut terms = Vec::with_capacity(group.members.len());
            let mut max_s = 0;
            for &k in &group.members {
                let d = &blocks[k][b];
                let rho = self.weights[k];
                obs.push(DeviceObservation {
                    alpha: d.alpha,
                    x_hat: d.x_hat.clone(),
                    weight: rho,
                    dim: d.params.dim,
                    modeled_mse: d.modeled_mse,
                });
                for (j, v) in d.sparse.iter().enumerate() {
                    if *v != 0.0 {
                        support_mask[j] = true;
                        group_truth[j] += rho * v;
                    }
                }
                terms.push(BoundTerm {
                    truncation_energy: d.truncation_energy,
                    sparsity: d.params.sparsity,
                    ratio: n as f64 / d.params.rows as f64,
                    alpha: f64::from(d.alpha),
                    weight: rho,
                    modeled_mse: d.modeled_mse,
                    dim: d.params.dim,
                });
                max_s = max_s.max(d.params.sparsity);
            }
            let observation = aggregate_group(&obs, group.rows, self.cfg.group_cap)?;
            worst_cond = worst_cond.max(observation.conditioning);
            let op_norm_sq = (self.cfg.recovery.algorithm != RecoveryAlgorithm::OracleLs
                && self.cfg.recovery.iht.step == StepPolicy::Fixed)
                .then(|| self.op_norm(epoch, b, &sensing));
            let problem = GroupProblem {
                a: sensing.view(),
                observation,
                sparsity_budget: (self.cfg.group_cap * max_s).min(group.rows),
                true_support: Some((0..n).filter(|&j| support_mask[j]).collect()),
                op_norm_sq,
            };
            let rec = recover_group(&problem, &self.cfg.recovery)?;
            fallbacks += usize::from(rec.fell_back);
            let group_nmse = nmse(&rec.estimate, &group_truth);
            let bound = crate::reconstructor::recovery_error_bound(&terms, n, self.cfg.group_cap);
            let energy = norm_sq(&group_truth);
            normalized_bounds.push(if energy > 0.0 { bound / energy } else { 0.0 });
            for j in 0..n {
                estimate[j] += rec.estimate[j];
                truth[j] += group_truth[j];
            }
            records.push(RecoveryRecord {
                round,
                block: b,
                group: gi,
                algorithm: rec.algorithm.name().to_string(),
                iters_used: rec.iters,
                nmse_vs_truth: group_nmse,
                bound_value: bound,
                wall_time_ms: start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3),
            });
        }
        Ok((estimate, truth, records, normalized_bounds, fallbacks, worst_cond))
    }

    /// Executes one communication round and applies the global update.
    pub fn run_round(&mut self) -> Result<RoundOutput> {
        let start = self.cfg.timing.then(Instant::now);
        let round = self.round + 1;
        let updates = self.local_updates(round)?;
        let k_total = self.cfg.devices;
        let n_bar = self.layout.total;
        let mut perfect = vec![0.0; n_bar];
        for (g, rho) in updates.iter().zip(&self.weights) {
            perfect.iter_mut().zip(g).for_each(|(p, x)| *p += rho * x);
        }

        let mut diagnostics = RoundDiagnostics { round, ..RoundDiagnostics::default() };
        let mut selections = Vec::new();
        let mut recovery = Vec::new();
        let (g_hat, mean_block_nmse, mean_bound, bits_per_entry) = match self.cfg.compression {
            CompressionMode::Off => {
                diagnostics.device_bits = vec![32 * n_bar as u64; k_total];
                diagnostics.expected_bits = diagnostics.device_bits.clone();
                diagnostics.capacity_bits = vec![32.0 * n_bar as f64; k_total];
                (perfect.clone(), 0.0, 0.0, 32.0)
            }
            CompressionMode::VqCs => {
                let epoch = self.epoch(round);
                let mut residuals = std::mem::take(&mut self.residuals);
                let mut slots: Vec<(Vec<ResidualState>, Option<Result<Vec<DeviceBlock>>>)> =
                    residuals.drain(..).map(|r| (r, None)).collect();
                {
                    let this = &*self;
                    par::for_each_mut(&mut slots, |k, (res, out)| {
                        *out = Some(this.compress_device(k, &updates[k], res, epoch));
                    });
                }
                let mut blocks = Vec::with_capacity(k_total);
                for (res, out) in slots {
                    self.residuals.push(res);
                    blocks.push(out.expect("every device compressed")?);
                }

                for (k, dev) in blocks.iter().enumerate() {
                    let bits: u64 = dev.iter().map(|d| d.payload_bits).sum();
                    let expected: u64 = dev
                        .iter()
                        .map(|d| d.params.subvectors as u64 * u64::from(d.params.shape_bits + d.params.gain_bits) + 32)
                        .sum();
                    diagnostics.device_bits.push(bits);
                    diagnostics.expected_bits.push(expected);
                    diagnostics
                        .capacity_bits
                        .push(self.capacities[k] * n_bar as f64 + 32.0 * self.layout.blocks as f64);
                    diagnostics.feedback_violations += dev.iter().map(|d| d.violations).sum::<usize>();
                    for (b, d) in dev.iter().enumerate() {
                        let p = d.params;
                        selections.push(SelectionRecord {
                            round,
                            device: k,
                            block: b,
                            capacity: p.capacity,
                            ratio: p.ratio,
                            bits_per_entry: p.bits_per_entry,
                            sparsity: p.sparsity,
                            rows: p.rows,
                            dim: p.dim,
                            subvectors: p.subvectors,
                            shape_bits: p.shape_bits,
                            gain_bits: p.gain_bits,
                            modeled_mse: d.modeled_mse,
                            payload_bits: d.payload_bits,
                        });
                    }
                }

                let per_block =
                    par::map_range(self.layout.blocks, |b| self.reconstruct_block(round, b, epoch, &blocks))
                        .into_iter()
                        .collect::<Result<Vec<_>>>()?;
                let mut est_blocks = Vec::with_capacity(self.layout.blocks);
                let mut truth_blocks = Vec::with_capacity(self.layout.blocks);
                let mut nmse_sum = 0.0;
                let mut bounds = Vec::new();
                for (est, truth, recs, nb, fb, cond) in per_block {
                    nmse_sum += nmse(&est, &truth);
                    bounds.extend(nb);
                    diagnostics.recovery_fallbacks += fb;
                    diagnostics.worst_conditioning = diagnostics.worst_conditioning.max(cond);
                    recovery.extend(recs);
                    est_blocks.push(est);
                    truth_blocks.push(truth);
                }
                let g_hat = self.layout.concatenate(&est_blocks);
                let g_tilde = self.layout.concatenate(&truth_blocks);
                let err: f64 = g_hat.iter().zip(&g_tilde).map(|(a, b)| (a - b) * (a - b)).sum();
                let proxy = norm_sq(&perfect);
                diagnostics.reconstruction_error_ratio = if proxy > 0.0 { err / proxy } else { err };
                if self.cfg.projection == ProjectionMode::PerRound {
                    if let Some(bank) = &self.projections {
                        bank.retain_epoch(epoch);
                    }
                    self.op_norms.lock().expect("op norm cache").retain(|(e, _, _), _| *e == epoch);
                }
                let bits_total: u64 = diagnostics.device_bits.iter().sum();
                let mean_bound = if bounds.is_empty() { 0.0 } else { bounds.iter().sum::<f64>() / bounds.len() as f64 };
                (g_hat, nmse_sum / self.layout.blocks as f64, mean_bound, bits_total as f64 / (k_total * n_bar) as f64)
            }
        };

        global_update(&mut self.w, &g_hat, &self.cfg.optimizer, &mut self.opt_state)?;
        self.round = round;
        let (train_loss, test_acc) = self.evaluate();
        let metrics = RoundMetrics {
            round,
            train_loss,
            test_acc,
            bits_per_entry,
            mean_block_nmse,
            mean_bound,
            wall_time_ms: start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3),
        };
        Ok(RoundOutput { metrics, diagnostics, selections, recovery, global_update: g_hat })
    }

    /// Runs all configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundOutput>> {
        (0..self.cfg.rounds).map(|_| self.run_round()).collect()
    }

    /// `sum_k rho_k g_k` for the next round's local updates, without advancing the state.
    pub fn peek_perfect_update(&self) -> Result<Vec<f64>> {
        let updates = self.local_updates(self.round + 1)?;
        let mut out = vec![0.0; self.layout.total];
        for (g, rho) in updates.iter().zip(&self.weights) {
            out.iter_mut().zip(g).for_each(|(p, x)| *p += rho * x);
        }
        Ok(out)
    }
}
