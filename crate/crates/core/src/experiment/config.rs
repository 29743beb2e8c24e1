//! TOML experiment configuration.
//!
//! ```toml
//! name = "pinned_mixture"
//!
//! [dataset]
//! id = "mixture"
//! [dataset.generate]
//! kind = "gaussian_mixture"
//! components = 8
//! radius = 2.0
//! std = 0.2
//! n = 8000
//! seed = 1
//!
//! [training]
//! epochs = 100
//!
//! [[tasks]]
//! name = "pin_x0"
//! constraint = { kind = "mask", indices = [0] }
//!
//! [[methods]]
//! name = "trust"
//! method = "trust"
//! steps = 200
//! schedule = { kind = "constant", start = 4.0, end = 4.0 }
//! w = 0.02
//! boundary = true
//!
//! [benchmark]
//! seeds = [0, 1, 2]
//! chains = 8
//! nfe_budget = 1000
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineMethod, DsgRadius};
use crate::datasets::DatasetSpec;
use crate::denoiser::{Activation, Architecture};
use crate::diffusion::{ScheduleParams, StepGrid};
use crate::error::{Error, Result};
use crate::sampler::{nfe_budget_for, nfe_upper_bound, ScheduleKind, TrustSchedule};
use crate::tasks::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub schedule: ScheduleParams,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

/// Where the data comes from: a dataset file, or generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<DatasetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_time_embed")]
    pub time_embed_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![128; 4]
}
fn default_time_embed() -> usize {
    32
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            time_embed_dim: default_time_embed(),
            activation: Activation::default(),
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, data_dim: usize) -> Architecture {
        Architecture {
            data_dim,
            hidden: self.hidden.clone(),
            time_embed_dim: self.time_embed_dim,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    2e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    #[serde(default = "default_cal_chains")]
    pub chains: usize,
    #[serde(default = "default_cal_steps")]
    pub steps: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cal_chains() -> usize {
    64
}
fn default_cal_steps() -> usize {
    200
}
fn default_margin() -> f64 {
    crate::sampler::DEFAULT_MARGIN
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            chains: default_cal_chains(),
            steps: default_cal_steps(),
            margin: default_margin(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Chains sampled per (method, task, seed) cell.
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfe_budget: Option<u64>,
    #[serde(default = "default_projections")]
    pub n_projections: usize,
    #[serde(default = "default_pairs")]
    pub diversity_pairs: usize,
    /// Write wall-clock seconds into `runtime_s`. Off by default so reruns
    /// produce identical files; the column then holds 0.
    #[serde(default)]
    pub record_runtime: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_chains() -> usize {
    16
}
fn default_projections() -> usize {
    100
}
fn default_pairs() -> usize {
    500
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            chains: default_chains(),
            nfe_budget: None,
            n_projections: default_projections(),
            diversity_pairs: default_pairs(),
            record_runtime: false,
        }
    }
}

fn default_eta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    /// DDIM steps `K`.
    pub steps: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(flatten)]
    pub kind: MethodKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodKind {
    /// Unguided sampling.
    Ddim,
    Trust {
        schedule: TrustSchedule,
        w: f64,
        /// Early termination on the noise-norm bound.
        #[serde(default)]
        boundary: bool,
        /// Explicit bound; when absent the calibrated value is used.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps_max: Option<f64>,
    },
    Dps {
        guidance_scale: f64,
    },
    Dsg {
        guidance_scale: f64,
        #[serde(default)]
        radius: DsgRadius,
    },
    LgdMc {
        guidance_scale: f64,
        particles: usize,
        radius_scale: f64,
    },
}

impl MethodConfig {
    pub fn grid(&self, timesteps: usize) -> Result<StepGrid> {
        StepGrid::uniform(timesteps, self.steps, self.eta)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            MethodKind::Ddim => "ddim",
            MethodKind::Trust { .. } => "trust",
            MethodKind::Dps { .. } => "dps",
            MethodKind::Dsg { .. } => "dsg",
            MethodKind::LgdMc { .. } => "lgd_mc",
        }
    }

    pub fn uses_calibration(&self) -> bool {
        matches!(
            self.kind,
            MethodKind::Trust {
                boundary: true,
                eps_max: None,
                ..
            }
        )
    }

    /// Expected network passes per chain (exact unless the schedule is
    /// stochastic).
    pub fn expected_nfe(&self) -> f64 {
        match &self.kind {
            MethodKind::Ddim => self.steps as f64,
            MethodKind::Trust { schedule, .. } => nfe_budget_for(schedule, self.steps),
            _ => 2.0 * self.steps as f64,
        }
    }

    /// Most network passes a single chain can use.
    pub fn max_nfe(&self) -> u64 {
        match &self.kind {
            MethodKind::Trust { schedule, .. } => nfe_upper_bound(schedule, self.steps),
            _ => self.expected_nfe() as u64,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(&self.kind, MethodKind::Trust { schedule, .. } if schedule.kind() == ScheduleKind::StochasticLinear)
    }

    pub fn baseline(&self, timesteps: usize) -> Result<Option<BaselineConfig>> {
        let grid = self.grid(timesteps)?;
        let (method, guidance_scale) = match self.kind {
            MethodKind::Dps { guidance_scale } => (BaselineMethod::Dps, guidance_scale),
            MethodKind::Dsg {
                guidance_scale,
                radius,
            } => (BaselineMethod::Dsg { radius }, guidance_scale),
            MethodKind::LgdMc {
                guidance_scale,
                particles,
                radius_scale,
            } => (
                BaselineMethod::LgdMc {
                    particles,
                    radius_scale,
                },
                guidance_scale,
            ),
            _ => return Ok(None),
        };
        Ok(Some(BaselineConfig {
            method,
            guidance_scale,
            grid,
        }))
    }

    pub fn validate(&self, timesteps: usize) -> Result<()> {
        let ctx = |e: Error| Error::Config(format!("method {}: {e}", self.name));
        self.grid(timesteps).map_err(ctx)?;
        match &self.kind {
            MethodKind::Ddim => {}
            MethodKind::Trust {
                schedule, w, eps_max, ..
            } => {
                schedule.validate_for(self.steps).map_err(ctx)?;
                if !(*w > 0.0 && w.is_finite()) {
                    return Err(Error::Config(format!("method {}: w must be > 0", self.name)));
                }
                if eps_max.is_some_and(|e| !(e > 0.0)) {
                    return Err(Error::Config(format!("method {}: eps_max must be > 0", self.name)));
                }
            }
            _ => {
                if let Some(b) = self.baseline(timesteps)? {
                    b.validate().map_err(ctx)?;
                }
            }
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub nfe_budget: Option<u64>,
    pub no_boundary: bool,
    pub schedule_reversed: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `--seed` replaces the training seed and the benchmark seed list.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.training.seed = seed;
            self.benchmark.seeds = vec![seed];
        }
        if let Some(b) = o.nfe_budget {
            self.benchmark.nfe_budget = Some(b);
        }
        for m in &mut self.methods {
            if let MethodKind::Trust {
                schedule, boundary, ..
            } = &mut m.kind
            {
                if o.no_boundary {
                    *boundary = false;
                }
                if o.schedule_reversed {
                    *schedule = schedule.reversed(true);
                }
            }
        }
    }

    pub fn method(&self, name: &str) -> Result<&MethodConfig> {
        self.methods
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("no method named {name}")))
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("no task named {name}")))
    }

    /// Checks everything that can be checked without data or a model.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() {
            return bad("experiment name is empty".into());
        }
        let timesteps = self.schedule.timesteps;
        self.schedule.build().map_err(|e| Error::Config(format!("schedule: {e}")))?;
        match (&self.dataset.path, &self.dataset.generate) {
            (None, None) => return bad("dataset needs a path or generate settings".into()),
            (_, Some(spec)) => spec.validate().map_err(|e| Error::Config(format!("dataset: {e}")))?,
            _ => {}
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 || !(self.training.learning_rate >= 0.0) {
            return bad("training needs epochs >= 1, batch_size >= 1, learning_rate >= 0".into());
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) || !self.model.time_embed_dim.is_multiple_of(2) {
            return bad("model needs nonempty nonzero hidden widths and an even time_embed_dim".into());
        }
        let cal = &self.calibration;
        if cal.chains == 0 || !(cal.margin >= 0.0) {
            return bad("calibration needs chains >= 1 and margin >= 0".into());
        }
        StepGrid::uniform(timesteps, cal.steps, 1.0).map_err(|e| Error::Config(format!("calibration: {e}")))?;
        let mut names = HashSet::new();
        for t in &self.tasks {
            if !names.insert(&t.name) {
                return bad(format!("duplicate task {}", t.name));
            }
            if !t.dataset.is_empty() && t.dataset != self.dataset.id {
                return bad(format!("task {} refers to unknown dataset {}", t.name, t.dataset));
            }
        }
        let mut names = HashSet::new();
        for m in &self.methods {
            if !names.insert(&m.name) {
                return bad(format!("duplicate method {}", m.name));
            }
            m.validate(timesteps)?;
        }
        let b = &self.benchmark;
        if b.seeds.is_empty() || b.chains == 0 || b.n_projections == 0 || b.diversity_pairs == 0 {
            return bad("benchmark needs seeds, chains >= 1, n_projections >= 1, diversity_pairs >= 1".into());
        }
        if b.chains < 2 {
            return bad("benchmark needs chains >= 2 to measure diversity".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "demo"

[dataset]
id = "mix"
[dataset.generate]
kind = "gaussian_mixture"
components = 8
radius = 2.0
std = 0.2
n = 1000
seed = 1

[training]
epochs = 2

[[tasks]]
name = "pin"
constraint = { kind = "mask", indices = [0] }

[[methods]]
name = "trust"
method = "trust"
steps = 200
schedule = { kind = "constant", start = 4.0, end = 4.0 }
w = 0.02
boundary = true

[[methods]]
name = "lgd"
method = "lgd_mc"
steps = 500
guidance_scale = 0.02
particles = 10
radius_scale = 0.3

[[methods]]
name = "dsg"
method = "dsg"
steps = 500
guidance_scale = 1.0
"#;

    #[test]
    fn parses_and_validates() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.methods.len(), 3);
        assert_eq!(c.method("trust").unwrap().expected_nfe(), 1000.0);
        assert_eq!(c.method("lgd").unwrap().max_nfe(), 1000);
        assert!(c.method("trust").unwrap().uses_calibration());
        assert_eq!(c.benchmark.chains, 16);
        assert_eq!(c.model.hidden, vec![128; 4]);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            nfe_budget: Some(500),
            no_boundary: true,
            schedule_reversed: true,
            ..Default::default()
        });
        assert_eq!(c.benchmark.seeds, vec![9]);
        assert_eq!(c.training.seed, 9);
        assert_eq!(c.benchmark.nfe_budget, Some(500));
        match &c.method("trust").unwrap().kind {
            MethodKind::Trust {
                boundary, schedule, ..
            } => {
                assert!(!boundary);
                assert!(schedule.is_reversed());
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = SAMPLE.replace("w = 0.02", "w = 0.0");
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        let bad = SAMPLE.replace("start = 4.0, end = 4.0", "start = 4.0, end = 5.0");
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        let bad = SAMPLE.replace("particles = 10", "particles = 0");
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        let bad = SAMPLE.replace("name = \"dsg\"", "name = \"lgd\"");
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        assert!(ExperimentConfig::from_toml("name = 3").is_err());
    }
}
