//! Scenario execution and artifact writing.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fedvqcs::experiments::{recovery_trial, vq_bench_row, RecoveryTrialConfig, VqBenchRow};
use fedvqcs::fl_sim::{load_mnist, RoundOutput, Simulation, Workload};
use fedvqcs::quantizer::{optimal_bit_allocation, CodebookBank, FORMAT_VERSION};
use fedvqcs::reconstructor::RecoverySettings;
use serde::Serialize;

use crate::config::{ExperimentConfig, Scenario};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SELECTIONS_FILE: &str = "selections.csv";
pub const RECOVERY_FILE: &str = "recovery.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const VQ_FILE: &str = "vq.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    codebook_format: u16,
    scenario: Scenario,
    seed: u64,
    parallel: bool,
    outputs: Vec<&'static str>,
    config: &'a ExperimentConfig,
}

/// Per-round diagnostics not covered by the metrics schema.
#[derive(Debug, Serialize)]
struct TraceRow {
    round: usize,
    reconstruction_error_ratio: f64,
    feedback_violations: usize,
    recovery_fallbacks: usize,
    worst_conditioning: f64,
    min_device_bits: u64,
    max_device_bits: u64,
    budget_mismatches: usize,
    over_capacity: usize,
}

impl TraceRow {
    fn new(out: &RoundOutput) -> Self {
        let d = &out.diagnostics;
        Self {
            round: d.round,
            reconstruction_error_ratio: d.reconstruction_error_ratio,
            feedback_violations: d.feedback_violations,
            recovery_fallbacks: d.recovery_fallbacks,
            worst_conditioning: d.worst_conditioning,
            min_device_bits: d.device_bits.iter().copied().min().unwrap_or(0),
            max_device_bits: d.device_bits.iter().copied().max().unwrap_or(0),
            budget_mismatches: d.device_bits.iter().zip(&d.expected_bits).filter(|(a, b)| a != b).count(),
            over_capacity: d.device_bits.iter().zip(&d.capacity_bits).filter(|(a, c)| **a as f64 > **c + 1e-9).count(),
        }
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// One human-readable line per notable result.
    pub lines: Vec<String>,
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn codebook_bank(cfg: &ExperimentConfig) -> CodebookBank {
    CodebookBank::new(cfg.codebooks.cache_dir.clone(), cfg.codebooks.seed, cfg.codebooks.budget())
}

fn outputs_for(scenario: Scenario) -> Vec<&'static str> {
    match scenario {
        Scenario::FlMnist | Scenario::FlSynthetic => {
            vec![METRICS_FILE, SELECTIONS_FILE, RECOVERY_FILE, TRACE_FILE, MANIFEST_FILE]
        }
        Scenario::RecoverSweep => vec![RECOVERY_FILE, MANIFEST_FILE],
        Scenario::VqBench => vec![VQ_FILE, MANIFEST_FILE],
        Scenario::CodebookBuild => vec![MANIFEST_FILE],
    }
}

fn write_manifest(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        codebook_format: FORMAT_VERSION,
        scenario: cfg.scenario,
        seed: cfg.seed,
        parallel: fedvqcs::par::PARALLEL,
        outputs: outputs_for(cfg.scenario),
        config: cfg,
    };
    let path = cfg.output_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Executes the configured scenario and writes its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
    let lines = match cfg.scenario {
        Scenario::FlMnist | Scenario::FlSynthetic => run_fl(cfg)?,
        Scenario::RecoverSweep => run_sweep(cfg)?,
        Scenario::VqBench => run_vq(cfg)?,
        Scenario::CodebookBuild => run_codebook(cfg)?,
    };
    write_manifest(cfg)?;
    Ok(RunSummary {
        output_dir: cfg.output_dir.clone(),
        files: outputs_for(cfg.scenario).into_iter().map(|f| cfg.output_dir.join(f)).collect(),
        lines,
    })
}

fn run_fl(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let sim_cfg = cfg.sim_config()?;
    let workload = match cfg.scenario {
        Scenario::FlMnist => {
            let dir = cfg.data_dir();
            let (train, test) = load_mnist(&dir).with_context(|| format!("loading MNIST from {}", dir.display()))?;
            Workload::Training { train: Arc::new(train), test: Arc::new(test) }
        }
        _ => Workload::Synthetic { params: cfg.synthetic.params, rate: cfg.synthetic.rate },
    };
    let mut sim = Simulation::new(sim_cfg, workload, Arc::new(codebook_bank(cfg)))?;
    let dir = &cfg.output_dir;
    let mut metrics = writer(dir, METRICS_FILE)?;
    let mut selections = writer(dir, SELECTIONS_FILE)?;
    let mut recovery = writer(dir, RECOVERY_FILE)?;
    let mut trace = writer(dir, TRACE_FILE)?;
    let mut last = None;
    for _ in 0..cfg.fl.rounds {
        let out = sim.run_round()?;
        metrics.serialize(&out.metrics)?;
        for s in &out.selections {
            selections.serialize(s)?;
        }
        for r in &out.recovery {
            recovery.serialize(r)?;
        }
        trace.serialize(TraceRow::new(&out))?;
        metrics.flush()?;
        let m = &out.metrics;
        eprintln!(
            "round {:>3}  loss {}  acc {}  bits/entry {:.4}  nmse {:.4}",
            m.round,
            m.train_loss.map_or("-".into(), |v| format!("{v:.4}")),
            m.test_acc.map_or("-".into(), |v| format!("{v:.4}")),
            m.bits_per_entry,
            m.mean_block_nmse
        );
        last = Some(out.metrics);
    }
    for w in [&mut selections, &mut recovery, &mut trace] {
        w.flush()?;
    }
    let mut lines = Vec::new();
    if let Some(m) = last {
        lines.push(format!(
            "final round {}: test accuracy {}, {:.4} bits/entry",
            m.round,
            m.test_acc.map_or("n/a".into(), |a| format!("{a:.4}")),
            m.bits_per_entry
        ));
    }
    Ok(lines)
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let sw = &cfg.sweep;
    if sw.trials == 0 || sw.ratios.is_empty() || sw.algorithms.is_empty() {
        bail!("sweep needs trials, ratios and algorithms");
    }
    let mut out = writer(&cfg.output_dir, RECOVERY_FILE)?;
    let mut lines = Vec::new();
    for &alg in &sw.algorithms {
        let mut settings = RecoverySettings::new(alg);
        settings.iht = cfg.recovery.iht;
        settings.gamp = cfg.recovery.gamp;
        for &ratio in &sw.ratios {
            let trial_cfg =
                RecoveryTrialConfig { n: sw.n, ratio, group_cap: sw.group_cap, sparsity: sw.sparsity, seed: cfg.seed };
            let mut exact = 0;
            let mut nmse = 0.0;
            for t in 0..sw.trials {
                let row = recovery_trial(&trial_cfg, t, &settings)?;
                exact += usize::from(row.exact_support);
                nmse += row.nmse;
                out.serialize(&row)?;
            }
            lines.push(format!(
                "{} R={ratio}: exact support {exact}/{}, mean nmse {:.3e}",
                alg.name(),
                sw.trials,
                nmse / sw.trials as f64
            ));
        }
    }
    out.flush()?;
    Ok(lines)
}

fn run_vq(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let bank = codebook_bank(cfg);
    let mut triples = cfg.vq.configs.clone();
    for &(l, q) in &cfg.vq.allocations {
        let a = optimal_bit_allocation(l, q)?;
        triples.push((l, a.shape_bits, a.gain_bits));
    }
    if triples.is_empty() {
        bail!("vq-bench needs at least one configuration");
    }
    let mut out = writer(&cfg.output_dir, VQ_FILE)?;
    let mut lines =
        vec![format!("{:>4} {:>4} {:>4} {:>12} {:>12} {:>8}", "L", "Qs", "Qh", "empirical", "model", "ratio")];
    for (l, qs, qh) in triples {
        let q = bank.quantizer(l, qs, qh)?;
        let row: VqBenchRow = vq_bench_row(&q, cfg.vq.samples, cfg.seed)?;
        lines.push(format!(
            "{:>4} {:>4} {:>4} {:>12.6} {:>12.6} {:>8.4}",
            row.dim, row.shape_bits, row.gain_bits, row.empirical_mse, row.model_mse, row.ratio
        ));
        out.serialize(&row)?;
    }
    out.flush()?;
    Ok(lines)
}

fn run_codebook(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let Some(cb) = &cfg.codebook else { bail!("codebook-build needs a [codebook] section") };
    let dir = cfg.codebooks.cache_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let bank = CodebookBank::new(Some(dir.clone()), cfg.codebooks.seed, cfg.codebooks.budget());
    let mut lines = Vec::new();
    if let Some(qs) = cb.shape_bits {
        let shape = bank.shape(cb.dim, qs)?;
        lines.push(format!(
            "shape L={} Qs={qs}: {} lines, min chordal distance {:.6}",
            cb.dim,
            shape.len(),
            shape.achieved_min_chordal()
        ));
    }
    if let Some(qh) = cb.gain_bits {
        let gain = bank.gain(cb.dim, qh)?;
        lines.push(format!("gain L={} Qh={qh}: {} levels", cb.dim, gain.levels().len()));
    }
    lines.push(format!("stored in {}", dir.display()));
    Ok(lines)
}
