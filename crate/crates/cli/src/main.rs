use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use fedvqcs::reconstructor::RecoveryAlgorithm;
use fedvqcs_cli::config::{CodebookBuildSection, ExperimentConfig, Scenario, SweepSection, VqSection};
use fedvqcs_cli::run_experiment;

#[derive(Parser)]
#[command(name = "fedvqcs", version, about = "Federated learning with vector-quantized compressed sensing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run any scenario described by a config file.
    Run(ConfigArgs),
    /// Federated-learning runs.
    #[command(subcommand)]
    Fl(FlCommand),
    /// Shape and gain codebooks.
    #[command(subcommand)]
    Codebook(CodebookCommand),
    /// Micro-benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FlCommand {
    Run(ConfigArgs),
}

#[derive(Subcommand)]
enum CodebookCommand {
    /// Builds (or loads from the cache) the codebooks for one dimension.
    Build {
        #[arg(long)]
        dim: usize,
        #[arg(long, required_unless_present = "gain_bits")]
        shape_bits: Option<u32>,
        #[arg(long)]
        gain_bits: Option<u32>,
        #[arg(long, default_value = "codebooks")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Empirical vs modeled quantizer MSE.
    Vq {
        #[arg(long)]
        dim: usize,
        /// Bits per entry, split by the allocation rule.
        #[arg(long, conflicts_with_all = ["shape_bits", "gain_bits"])]
        bits: Option<f64>,
        #[arg(long, requires = "gain_bits")]
        shape_bits: Option<u32>,
        #[arg(long, requires = "shape_bits")]
        gain_bits: Option<u32>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "runs/bench-vq")]
        out: PathBuf,
    },
    /// Noiseless single-group support recovery.
    Recover {
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        group_cap: usize,
        #[arg(long, default_value_t = 2.0)]
        ratio: f64,
        #[arg(long)]
        sparsity: Option<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, value_enum, default_value = "iht")]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "runs/bench-recover")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AlgorithmArg {
    OracleLs,
    Iht,
    Gamp,
}

impl From<AlgorithmArg> for RecoveryAlgorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::OracleLs => RecoveryAlgorithm::OracleLs,
            AlgorithmArg::Iht => RecoveryAlgorithm::Iht,
            AlgorithmArg::Gamp => RecoveryAlgorithm::Gamp,
        }
    }
}

fn from_config(args: ConfigArgs, fl_only: bool) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if fl_only && !matches!(cfg.scenario, Scenario::FlMnist | Scenario::FlSynthetic) {
        bail!("`fl run` needs an fl-mnist or fl-synthetic config, got {}", cfg.scenario.name());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn build(command: Command) -> Result<ExperimentConfig> {
    Ok(match command {
        Command::Run(args) => from_config(args, false)?,
        Command::Fl(FlCommand::Run(args)) => from_config(args, true)?,
        Command::Codebook(CodebookCommand::Build { dim, shape_bits, gain_bits, out, seed, restarts, iterations }) => {
            let mut cfg = ExperimentConfig::new(Scenario::CodebookBuild, seed, out.clone());
            cfg.codebook = Some(CodebookBuildSection { dim, shape_bits, gain_bits });
            cfg.codebooks.seed = seed;
            cfg.codebooks.cache_dir = Some(out);
            if let Some(r) = restarts {
                cfg.codebooks.restarts = r;
            }
            if let Some(i) = iterations {
                cfg.codebooks.iterations = i;
            }
            cfg
        }
        Command::Bench(BenchCommand::Vq { dim, bits, shape_bits, gain_bits, samples, seed, out }) => {
            let mut cfg = ExperimentConfig::new(Scenario::VqBench, seed, out);
            cfg.vq = match (bits, shape_bits, gain_bits) {
                (Some(q), _, _) => VqSection { configs: Vec::new(), allocations: vec![(dim, q)], samples },
                (None, Some(qs), Some(qh)) => {
                    VqSection { configs: vec![(dim, qs, qh)], allocations: Vec::new(), samples }
                }
                _ => bail!("give --bits or both --shape-bits and --gain-bits"),
            };
            cfg
        }
        Command::Bench(BenchCommand::Recover { n, group_cap, ratio, sparsity, trials, algorithm, seed, out }) => {
            let mut cfg = ExperimentConfig::new(Scenario::RecoverSweep, seed, out);
            cfg.sweep = SweepSection {
                n,
                group_cap,
                ratios: vec![ratio],
                trials,
                sparsity,
                algorithms: vec![algorithm.into()],
            };
            cfg
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(cli.command).and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("outputs in {}", summary.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
