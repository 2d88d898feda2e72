//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedvqcs::fl_sim::{
    CapacitySpec, CompressionMode, GlobalOptimizer, ProjectionMode, QuantizerMode, RatioPolicy, SimConfig,
};
use fedvqcs::param_opt::{CandidateRatios, DimPolicy, DEFAULT_DIM_CEILING};
use fedvqcs::quantizer::PackingBudget;
use fedvqcs::reconstructor::{GampConfig, IhtConfig, RecoveryAlgorithm, RecoverySettings};
use serde::{Deserialize, Serialize};

/// Overrides `[data] dir`.
pub const DATA_DIR_ENV: &str = "FEDVQCS_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    FlMnist,
    FlSynthetic,
    RecoverSweep,
    VqBench,
    CodebookBuild,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub codebooks: CodebookSection,
    #[serde(default)]
    pub fl: FlSection,
    #[serde(default)]
    pub capacity: CapacitySection,
    #[serde(default)]
    pub recovery: RecoverySection,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub vq: VqSection,
    #[serde(default)]
    pub codebook: Option<CodebookBuildSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("data/mnist") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookSection {
    /// Codebooks built once are stored here; omit to keep them in memory.
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub restarts: usize,
    pub iterations: usize,
}

impl Default for CodebookSection {
    fn default() -> Self {
        let b = PackingBudget::default();
        Self { cache_dir: None, seed: 7, restarts: b.restarts, iterations: b.iterations }
    }
}

impl CodebookSection {
    pub fn budget(&self) -> PackingBudget {
        PackingBudget { restarts: self.restarts, iterations: self.iterations }
    }
}

/// `"optimized"` or a fixed ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatioSetting {
    Fixed(f64),
    Named(String),
}

/// `"auto"` or a fixed subvector dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimSetting {
    Fixed(usize),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlSection {
    pub devices: usize,
    pub rounds: usize,
    pub local_iters: usize,
    pub batch: usize,
    pub local_lr: f64,
    pub blocks: usize,
    pub group_cap: usize,
    pub samples_per_device: usize,
    pub classes_per_device: usize,
    pub hidden: usize,
    pub compression: CompressionMode,
    pub quantizer: QuantizerMode,
    pub projection: ProjectionMode,
    pub ratio: RatioSetting,
    pub candidates: Vec<f64>,
    pub sparsity: Option<usize>,
    pub dim: DimSetting,
    pub dim_ceiling: usize,
    pub timing: bool,
    pub optimizer: GlobalOptimizer,
}

impl Default for FlSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            devices: d.devices,
            rounds: d.rounds,
            local_iters: d.local_iters,
            batch: d.batch,
            local_lr: d.local_lr,
            blocks: d.blocks,
            group_cap: d.group_cap,
            samples_per_device: d.samples_per_device,
            classes_per_device: d.classes_per_device,
            hidden: d.hidden,
            compression: d.compression,
            quantizer: d.quantizer,
            projection: d.projection,
            ratio: RatioSetting::Named("optimized".into()),
            candidates: d.candidates.values().to_vec(),
            sparsity: None,
            dim: DimSetting::Named("auto".into()),
            dim_ceiling: DEFAULT_DIM_CEILING,
            timing: false,
            optimizer: d.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySection {
    /// Homogeneous capacity in bits per entry.
    pub bits_per_entry: Option<f64>,
    /// Heterogeneous set; each device draws from it uniformly once.
    pub set: Option<Vec<f64>>,
}

impl Default for CapacitySection {
    fn default() -> Self {
        Self { bits_per_entry: Some(0.1), set: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverySection {
    pub algorithm: RecoveryAlgorithm,
    pub iht: IhtConfig,
    pub gamp: GampConfig,
}

impl Default for RecoverySection {
    fn default() -> Self {
        Self { algorithm: RecoveryAlgorithm::Gamp, iht: IhtConfig::default(), gamp: GampConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub params: usize,
    pub rate: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self { params: 15910, rate: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n: usize,
    pub group_cap: usize,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub sparsity: Option<usize>,
    pub algorithms: Vec<RecoveryAlgorithm>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n: 1024,
            group_cap: 4,
            ratios: vec![2.0],
            trials: 100,
            sparsity: None,
            algorithms: vec![RecoveryAlgorithm::Iht],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqSection {
    /// Explicit `(L, Q_s, Q_h)` triples.
    pub configs: Vec<(usize, u32, u32)>,
    /// `(L, Q)` pairs split by the bit allocation rule.
    pub allocations: Vec<(usize, f64)>,
    pub samples: usize,
}

impl Default for VqSection {
    fn default() -> Self {
        Self { configs: vec![(2, 3, 2), (4, 7, 3)], allocations: vec![(4, 2.0)], samples: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookBuildSection {
    pub dim: usize,
    pub shape_bits: Option<u32>,
    pub gain_bits: Option<u32>,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::FlMnist => "fl-mnist",
            Scenario::FlSynthetic => "fl-synthetic",
            Scenario::RecoverSweep => "recover-sweep",
            Scenario::VqBench => "vq-bench",
            Scenario::CodebookBuild => "codebook-build",
        }
    }
}

impl ExperimentConfig {
    /// All sections at their defaults; not validated.
    pub fn new(scenario: Scenario, seed: u64, output_dir: PathBuf) -> Self {
        Self {
            scenario,
            seed,
            output_dir,
            data: DataSection::default(),
            codebooks: CodebookSection::default(),
            fl: FlSection::default(),
            capacity: CapacitySection::default(),
            recovery: RecoverySection::default(),
            synthetic: SyntheticSection::default(),
            sweep: SweepSection::default(),
            vq: VqSection::default(),
            codebook: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Referenced inputs must exist before anything runs.
    pub fn check_paths(&self) -> Result<()> {
        if self.scenario == Scenario::FlMnist {
            let dir = self.data_dir();
            if !dir.is_dir() {
                bail!("data directory {} does not exist (set [data] dir or {DATA_DIR_ENV})", dir.display());
            }
        }
        Ok(())
    }

    /// Data directory after the environment override.
    pub fn data_dir(&self) -> PathBuf {
        std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.data.dir.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let fl = &self.fl;
        for (name, v) in [
            ("fl.devices", fl.devices),
            ("fl.rounds", fl.rounds),
            ("fl.local_iters", fl.local_iters),
            ("fl.batch", fl.batch),
            ("fl.blocks", fl.blocks),
            ("fl.group_cap", fl.group_cap),
            ("fl.samples_per_device", fl.samples_per_device),
            ("fl.classes_per_device", fl.classes_per_device),
            ("fl.hidden", fl.hidden),
        ] {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if !(fl.local_lr > 0.0) {
            bail!("fl.local_lr must be positive");
        }
        match (&self.capacity.bits_per_entry, &self.capacity.set) {
            (Some(_), Some(_)) => bail!("capacity: give either bits_per_entry or set, not both"),
            (None, None) => bail!("capacity: missing bits_per_entry or set"),
            (Some(c), None) if !(*c > 0.0) => bail!("capacity.bits_per_entry must be positive"),
            (None, Some(s)) if s.is_empty() || s.iter().any(|c| !(*c > 0.0)) => {
                bail!("capacity.set must hold positive values")
            }
            _ => {}
        }
        self.ratio_policy()?;
        self.dim_policy()?;
        CandidateRatios::new(fl.candidates.clone())?;
        if self.scenario == Scenario::CodebookBuild {
            let Some(cb) = &self.codebook else { bail!("codebook-build needs a [codebook] section") };
            if cb.shape_bits.is_none() && cb.gain_bits.is_none() {
                bail!("codebook: give shape_bits and/or gain_bits");
            }
        }
        Ok(())
    }

    fn ratio_policy(&self) -> Result<RatioPolicy> {
        match &self.fl.ratio {
            RatioSetting::Fixed(r) if *r >= 1.0 => Ok(RatioPolicy::Fixed(*r)),
            RatioSetting::Fixed(r) => bail!("fl.ratio {r} must be at least 1"),
            RatioSetting::Named(s) if s == "optimized" => Ok(RatioPolicy::Optimized),
            RatioSetting::Named(s) => bail!("fl.ratio: expected \"optimized\" or a number, got {s:?}"),
        }
    }

    fn dim_policy(&self) -> Result<DimPolicy> {
        match &self.fl.dim {
            DimSetting::Fixed(0) => bail!("fl.dim must be positive"),
            DimSetting::Fixed(l) => Ok(DimPolicy::Fixed(*l)),
            DimSetting::Named(s) if s == "auto" => Ok(DimPolicy::Auto { ceiling: self.fl.dim_ceiling.max(1) }),
            DimSetting::Named(s) => bail!("fl.dim: expected \"auto\" or an integer, got {s:?}"),
        }
    }

    pub fn recovery_settings(&self) -> RecoverySettings {
        RecoverySettings { algorithm: self.recovery.algorithm, iht: self.recovery.iht, gamp: self.recovery.gamp }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let fl = &self.fl;
        let capacity = match (&self.capacity.bits_per_entry, &self.capacity.set) {
            (Some(c), None) => CapacitySpec::Homogeneous(*c),
            (None, Some(s)) => CapacitySpec::Set(s.clone()),
            _ => bail!("invalid capacity section"),
        };
        Ok(SimConfig {
            devices: fl.devices,
            rounds: fl.rounds,
            local_iters: fl.local_iters,
            batch: fl.batch,
            local_lr: fl.local_lr,
            optimizer: fl.optimizer,
            blocks: fl.blocks,
            group_cap: fl.group_cap,
            candidates: CandidateRatios::new(fl.candidates.clone())?,
            capacity,
            ratio_policy: self.ratio_policy()?,
            compression: fl.compression,
            quantizer: fl.quantizer,
            sparsity_override: fl.sparsity,
            dim_policy: self.dim_policy()?,
            recovery: self.recovery_settings(),
            projection: fl.projection,
            seed: self.seed,
            samples_per_device: fl.samples_per_device,
            classes_per_device: fl.classes_per_device,
            hidden: fl.hidden,
            timing: fl.timing,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "scenario = \"fl-mnist\"\nseed = 3\noutput_dir = \"out\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml(MIN).unwrap();
        let sim = cfg.sim_config().unwrap();
        assert_eq!(sim.seed, 3);
        assert_eq!(sim.devices, 15);
        assert_eq!(sim.capacity, CapacitySpec::Homogeneous(0.1));
        assert_eq!(sim.ratio_policy, RatioPolicy::Optimized);
    }

    #[test]
    fn fixed_ratio_and_capacity_set() {
        let text = format!("{MIN}[fl]\nratio = 2.25\ndim = 8\n[capacity]\nbits_per_entry = 0.2\n");
        let sim = ExperimentConfig::from_toml(&text).unwrap().sim_config().unwrap();
        assert_eq!(sim.ratio_policy, RatioPolicy::Fixed(2.25));
        assert_eq!(sim.dim_policy, DimPolicy::Fixed(8));
        assert_eq!(sim.capacity, CapacitySpec::Homogeneous(0.2));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml("scenario = \"fl-mnist\"\noutput_dir = \"o\"\n").is_err());
        assert!(ExperimentConfig::from_toml(&format!("{MIN}bogus = 1\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{MIN}[fl]\nratio = \"best\"\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{MIN}[capacity]\nbits_per_entry = 0.1\nset = [0.1]\n")).is_err());
    }

    #[test]
    fn optimizer_table() {
        let text = format!("{MIN}[fl.optimizer]\nkind = \"adam\"\nlr = 0.01\nbeta1 = 0.9\nbeta2 = 0.999\neps = 1e-8\n");
        let sim = ExperimentConfig::from_toml(&text).unwrap().sim_config().unwrap();
        assert_eq!(sim.optimizer, GlobalOptimizer::adam(0.01));
    }
}
