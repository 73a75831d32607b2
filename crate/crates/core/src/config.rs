//! Run configuration: one TOML file feeding scenario generation, training,
//! scheduling, and the link model, with dotted-path command-line overrides.
//!
//! Unknown keys are rejected and every invariant violation names the
//! offending key, so a bad config fails before any work starts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderParams;
use crate::error::Result;
use crate::grid::GridSpec;
use crate::relax::TrainParams;
use crate::scene::{generate_scenario, SceneOptions, Scenario};
use crate::sched::{SchedulerConfig, TopK};
use crate::sim::CommBudget;
use crate::train::ModelParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config key `{key}`: {message}")]
    Key { key: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}` (expected KEY=VALUE with a dotted key)")]
    Override(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub h: u16,
    pub w: u16,
    pub c: u16,
    pub cell_size: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            h: 48,
            w: 96,
            c: 64,
            cell_size: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    pub count: usize,
    #[serde(default = "default_sensing_radius")]
    pub sensing_radius: f64,
}

fn default_sensing_radius() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObjectsSection {
    #[serde(default)]
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection { amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    0.02
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            kappa: default_kappa(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_top_k")]
    pub top_k: u8,
}

fn default_tau() -> f64 {
    0.05
}

fn default_top_k() -> u8 {
    1
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            tau: default_tau(),
            top_k: default_top_k(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default = "default_bandwidth_mbps")]
    pub bandwidth_mbps: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub control_bandwidth_mbps: Option<f64>,
    #[serde(default)]
    pub compute_latency_ms: f64,
}

fn default_bandwidth_mbps() -> f64 {
    20.0
}

fn default_frame_rate() -> f64 {
    10.0
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection {
            bandwidth_mbps: default_bandwidth_mbps(),
            frame_rate: default_frame_rate(),
            control_bandwidth_mbps: None,
            compute_latency_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_temp0")]
    pub eta0: f64,
    #[serde(default = "default_temp1")]
    pub eta1: f64,
    #[serde(default = "default_temp0")]
    pub gamma0: f64,
    #[serde(default = "default_temp1")]
    pub gamma1: f64,
    #[serde(default)]
    pub seed: u64,
    /// Reserved for an Adam variant of the trainer; the shipped optimizer
    /// is plain gradient descent and ignores these.
    #[serde(default = "default_adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_adam_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_lr")]
    pub adam_lr: f64,
}

fn default_adam_beta1() -> f64 {
    0.9
}

fn default_adam_beta2() -> f64 {
    0.999
}

fn default_adam_lr() -> f64 {
    0.002
}

fn default_lr() -> f64 {
    0.5
}

fn default_epochs() -> usize {
    30
}

fn default_lambda() -> f64 {
    0.01
}

fn default_temp0() -> f64 {
    0.9
}

fn default_temp1() -> f64 {
    0.1
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: default_lr(),
            epochs: default_epochs(),
            lambda: default_lambda(),
            eta0: default_temp0(),
            eta1: default_temp1(),
            gamma0: default_temp0(),
            gamma1: default_temp1(),
            seed: 0,
            adam_beta1: default_adam_beta1(),
            adam_beta2: default_adam_beta2(),
            adam_lr: default_adam_lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
    #[serde(default = "default_sweep_agents")]
    pub agents: Vec<usize>,
}

fn default_sweep_seeds() -> usize {
    20
}

fn default_sweep_agents() -> Vec<usize> {
    vec![2, 4, 8, 16]
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            seeds: default_sweep_seeds(),
            agents: default_sweep_agents(),
        }
    }
}

/// The merged run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSection,
    pub agents: AgentsSection,
    #[serde(default)]
    pub objects: ObjectsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    /// Optional path to a parameter file produced by training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<String>,
}

fn key_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parse a TOML document, apply `KEY=VALUE` overrides, and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialize")
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if self.grid.h == 0 {
            return Err(key_err("grid.h", "must be at least 1"));
        }
        if self.grid.w == 0 {
            return Err(key_err("grid.w", "must be at least 1"));
        }
        if self.grid.c == 0 {
            return Err(key_err("grid.c", "must be at least 1"));
        }
        if self.grid.cell_size.is_nan() || self.grid.cell_size <= 0.0 {
            return Err(key_err("grid.cell_size", "must be positive"));
        }
        if self.agents.count == 0 {
            return Err(key_err("agents.count", "must be at least 1"));
        }
        if self.agents.sensing_radius.is_nan() || self.agents.sensing_radius <= 0.0 {
            return Err(key_err("agents.sensing_radius", "must be positive"));
        }
        if self.noise.sigma < 0.0 {
            return Err(key_err("noise.sigma", "must be non-negative"));
        }
        if self.features.amplitude.is_nan() || self.features.amplitude <= 0.0 {
            return Err(key_err("features.amplitude", "must be positive"));
        }
        if self.scheduler.tau.is_nan() || self.scheduler.tau < 0.0 {
            return Err(key_err("scheduler.tau", "must be non-negative"));
        }
        if !matches!(self.scheduler.top_k, 1 | 2) {
            return Err(key_err("scheduler.top_k", "must be 1 or 2"));
        }
        if self.budget.bandwidth_mbps.is_nan() || self.budget.bandwidth_mbps <= 0.0 {
            return Err(key_err("budget.bandwidth_mbps", "must be positive"));
        }
        if self.budget.frame_rate.is_nan() || self.budget.frame_rate <= 0.0 {
            return Err(key_err("budget.frame_rate", "must be positive"));
        }
        if let Some(cb) = self.budget.control_bandwidth_mbps {
            if cb.is_nan() || cb <= 0.0 {
                return Err(key_err("budget.control_bandwidth_mbps", "must be positive"));
            }
        }
        if self.budget.compute_latency_ms < 0.0 {
            return Err(key_err("budget.compute_latency_ms", "must be non-negative"));
        }
        if self.train.lr.is_nan() || self.train.lr <= 0.0 {
            return Err(key_err("train.lr", "must be positive"));
        }
        if self.train.epochs == 0 {
            return Err(key_err("train.epochs", "must be at least 1"));
        }
        if self.train.lambda < 0.0 {
            return Err(key_err("train.lambda", "must be non-negative"));
        }
        for (key, v) in [
            ("train.eta0", self.train.eta0),
            ("train.eta1", self.train.eta1),
            ("train.gamma0", self.train.gamma0),
            ("train.gamma1", self.train.gamma1),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(key_err(key, "must be positive"));
            }
        }
        if self.sweep.seeds == 0 {
            return Err(key_err("sweep.seeds", "must be at least 1"));
        }
        if self.sweep.agents.is_empty() {
            return Err(key_err("sweep.agents", "must list at least one agent count"));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.h, self.grid.w, self.grid.c, self.grid.cell_size)
    }

    pub fn scene_options(&self) -> SceneOptions {
        SceneOptions {
            sensing_radius: self.agents.sensing_radius,
            noise_sigma: self.noise.sigma,
            feature_amplitude: self.features.amplitude,
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        generate_scenario(
            self.agents.count,
            self.objects.count,
            self.grid_spec()?,
            self.seed,
            self.scene_options(),
        )
    }

    pub fn comm_budget(&self) -> Result<CommBudget> {
        let mut budget = CommBudget::new(self.budget.bandwidth_mbps * 1e6, self.budget.frame_rate)?;
        if let Some(cb) = self.budget.control_bandwidth_mbps {
            budget.control_bandwidth_bps = cb * 1e6;
        }
        budget.compute_latency_ms = self.budget.compute_latency_ms;
        Ok(budget)
    }

    pub fn scheduler_config(&self) -> Result<SchedulerConfig> {
        SchedulerConfig::new(
            self.scheduler.tau,
            self.comm_budget()?.budget_bytes(),
            TopK::try_from(self.scheduler.top_k)?,
        )
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            tau: self.scheduler.tau,
            eta0: self.train.eta0,
            eta1: self.train.eta1,
            gamma0: self.train.gamma0,
            gamma1: self.train.gamma1,
            lambda: self.train.lambda,
            learning_rate: self.train.lr,
            epochs: self.train.epochs,
            seed: self.train.seed,
        }
    }

    /// Model parameters: loaded from the configured parameter file when
    /// present, otherwise the deterministic default initialization.
    pub fn model_params(&self, base_dir: Option<&std::path::Path>) -> Result<ModelParams> {
        match &self.params {
            Some(path) => {
                let full = match base_dir {
                    Some(dir) => dir.join(path),
                    None => std::path::PathBuf::from(path),
                };
                let text = std::fs::read_to_string(&full)?;
                let file = crate::train::ParamsFile::from_toml(&text)?;
                let model = file.into_model(self.scheduler.tau)?;
                model.check_dims(&self.grid_spec()?)?;
                Ok(model)
            }
            None => {
                let enc = EncoderParams::new(self.encoder.kappa, self.train.lambda)?;
                Ok(ModelParams::init(
                    self.grid.c as usize,
                    enc,
                    self.scheduler.tau,
                    self.seed,
                ))
            }
        }
    }
}

/// Apply one `dotted.key=value` override onto the parsed TOML tree. The
/// value is parsed as TOML, so strings need quotes but numbers and booleans
/// work bare.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> std::result::Result<(), ConfigError> {
    let (key, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let parsed: toml::Value = toml::from_str(&format!("v = {}", raw_value.trim()))
        .map(|t: toml::Table| t["v"].clone())
        .or_else(|_| {
            // Fall back to treating the value as a bare string.
            Ok::<_, ConfigError>(toml::Value::String(raw_value.trim().to_string()))
        })?;
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| key_err(key, "path passes through a non-table value"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop returns on the last segment")
}

/// Minimal default config document used by tests and as a starting point.
pub const DEFAULT_CONFIG: &str = r#"seed = 7

[grid]
h = 24
w = 24
c = 8
cell_size = 1.0

[agents]
count = 2
sensing_radius = 20.0

[objects]
count = 6

[noise]
sigma = 0.0
"#;
