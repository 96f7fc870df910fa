//! TOML configuration for the three subcommands.

use std::path::{Path, PathBuf};

use reldiff::field::Estimator;
use reldiff::harness::{
    DiffusionConfig, EquilibrationConfig, ExperimentConfig, MarkovLimitConfig, ProperGrowthConfig, SpecConfig,
    TolerancePolicy,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub field: Option<FieldSection>,
    pub kubo: Option<KuboSection>,
    #[serde(default)]
    pub experiment: Vec<ExperimentEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(default)]
    pub spec: SpecConfig,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    /// Separations `x - x'` at which the two-point tensor is checked.
    #[serde(default = "default_separations")]
    pub separations: Vec<[f64; 4]>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    /// Largest finite-difference step of the Bianchi check; `h/2` and `h/4` follow.
    #[serde(default = "default_bianchi_h")]
    pub bianchi_h: f64,
}

fn default_coupling() -> f64 {
    0.1
}

fn default_modes() -> usize {
    4096
}

fn default_seeds() -> usize {
    200
}

fn default_separations() -> Vec<[f64; 4]> {
    vec![[0.0; 4], [0.5, 0.0, 0.0, 0.0], [0.0, 0.5, 0.0, 0.0], [0.3, 0.2, -0.1, 0.4]]
}

fn default_quad_order() -> usize {
    48
}

fn default_bianchi_h() -> f64 {
    0.1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KuboSection {
    pub profile: ProfileConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileConfig {
    /// `g(u) = A e^{-r u}`.
    Exponential { amplitude: f64, rate: f64 },
    /// `g(u) = A (1 + u/ℓ²)^{-q}`.
    PowerLaw { amplitude: f64, length: f64, exponent: f64 },
    Constant { value: f64 },
    /// CSV with columns `s,H1,H` and optional standard-error columns.
    Table { path: PathBuf },
    /// Monte Carlo profile along the worldline of spatial momentum `p`.
    Field {
        #[serde(default)]
        spec: SpecConfig,
        #[serde(default = "default_coupling")]
        coupling: f64,
        #[serde(default = "default_modes")]
        n_modes: usize,
        #[serde(default = "default_seeds")]
        n_seeds: usize,
        #[serde(default)]
        p: [f64; 3],
        /// Grid end, default ten decay scales.
        grid_end: Option<f64>,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
        #[serde(default)]
        estimator: Estimator,
    },
}

fn default_grid_points() -> usize {
    512
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub name: String,
    #[serde(flatten)]
    pub task: Task,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    FieldEnsemble(ExperimentConfig),
    DiffusionEnsemble(DiffusionConfig),
    /// Field ensemble against the Schay–Dudley diffusion with `κ²` from the
    /// spectral density unless given.
    Compare {
        field: ExperimentConfig,
        kappa2: Option<f64>,
        #[serde(default)]
        policy: TolerancePolicy,
    },
    Equilibration(EquilibrationConfig),
    LabVsProper(DiffusionConfig),
    MarkovLimit(MarkovLimitConfig),
    ProperGrowth(ProperGrowthConfig),
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::FieldEnsemble(_) => "field-ensemble",
            Task::DiffusionEnsemble(_) => "diffusion-ensemble",
            Task::Compare { .. } => "compare",
            Task::Equilibration(_) => "equilibration",
            Task::LabVsProper(_) => "lab-vs-proper",
            Task::MarkovLimit(_) => "markov-limit",
            Task::ProperGrowth(_) => "proper-growth",
        }
    }

    /// Overwrites every master seed in the task.
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Task::FieldEnsemble(c) => c.schedule.master_seed = seed,
            Task::DiffusionEnsemble(c) | Task::LabVsProper(c) => c.schedule.master_seed = seed,
            Task::Compare { field, .. } => field.schedule.master_seed = seed,
            Task::Equilibration(c) => c.diffusion.schedule.master_seed = seed,
            Task::MarkovLimit(c) => c.field.schedule.master_seed = seed,
            Task::ProperGrowth(c) => c.schedule.master_seed = seed,
        }
    }
}

/// Configuration problems that map to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn load(path: &Path) -> Result<Config, UsageError> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))
}

pub fn parse(text: &str) -> Result<Config, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}
