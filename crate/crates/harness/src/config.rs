//! Experiment and sweep documents (JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use eqdp::env::{
    make_gaussian, make_overcomplete, make_random_tabular, EmissionStyle, Environment,
    GaussianSpec, OvercompleteSpec, RewardNoise, TabularSpec,
};
use eqdp::eqdp::{EqdpConfig, Mode, Multipliers};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

/// A fixed size or an inclusive range drawn uniformly per seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Size {
    Fixed(usize),
    Range([usize; 2]),
}

impl Size {
    /// Fixed sizes pass through untouched so the generator can name the
    /// violated constraint; ranges are clipped below at `floor` first.
    fn draw(self, floor: usize, rng: &mut ChaCha8Rng, name: &str) -> Result<usize> {
        let (lo, hi) = match self {
            Size::Fixed(v) => return Ok(v),
            Size::Range([lo, hi]) => (lo.max(floor), hi),
        };
        if lo > hi {
            return Err(HarnessError::Validation(format!(
                "{name}: empty range [{lo}, {hi}] after applying the lower bound {floor}"
            )));
        }
        Ok(rng.random_range(lo..=hi))
    }
}

/// Environment generation request. `None` fields take the generator defaults;
/// a missing `seed` means "use the run seed".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenerationSpec {
    Tabular {
        states: Size,
        observations: Size,
        actions: Size,
        horizon: Size,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_gap: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<RewardNoise>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        emission: Option<EmissionStyle>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_attempts: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Overcomplete {
        states: Size,
        observations: Size,
        actions: Size,
        horizon: Size,
        future_depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_gap: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<RewardNoise>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_attempts: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Gaussian {
        states: Size,
        obs_dim: Size,
        actions: Size,
        horizon: Size,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_gap: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<RewardNoise>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean_scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_attempts: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

/// Sizes are drawn from a stream separate from the generator's.
const SIZE_STREAM: u64 = 1;

/// Concrete generator input for one seed.
#[derive(Clone, Debug, PartialEq)]
pub enum ConcreteSpec {
    Tabular(TabularSpec),
    Overcomplete(OvercompleteSpec),
    Gaussian(GaussianSpec),
}

impl GenerationSpec {
    /// Generator seed for run seed `seed`.
    pub fn env_seed(&self, seed: u64) -> u64 {
        let fixed = match self {
            GenerationSpec::Tabular { seed, .. }
            | GenerationSpec::Overcomplete { seed, .. }
            | GenerationSpec::Gaussian { seed, .. } => *seed,
        };
        fixed.unwrap_or(seed)
    }

    /// Draws the sizes for `seed` (observations never fall below states for
    /// tabular environments) and fills in the optional fields.
    pub fn concrete(&self, seed: u64) -> Result<ConcreteSpec> {
        let env_seed = self.env_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed);
        rng.set_stream(SIZE_STREAM);
        Ok(match *self {
            GenerationSpec::Tabular {
                states,
                observations,
                actions,
                horizon,
                min_sigma,
                min_gap,
                noise,
                emission,
                max_attempts,
                ..
            } => {
                let s = states.draw(1, &mut rng, "states")?;
                let o = observations.draw(s, &mut rng, "observations")?;
                let a = actions.draw(1, &mut rng, "actions")?;
                let h = horizon.draw(1, &mut rng, "horizon")?;
                let mut spec = TabularSpec::new(s, o, a, h);
                if let Some(v) = min_sigma {
                    spec = spec.min_sigma(v);
                }
                if let Some(v) = min_gap {
                    spec = spec.min_gap(v);
                }
                if let Some(v) = noise {
                    spec = spec.noise(v);
                }
                if let Some(v) = emission {
                    spec = spec.emission(v);
                }
                if let Some(v) = max_attempts {
                    spec = spec.max_attempts(v);
                }
                ConcreteSpec::Tabular(spec)
            }
            GenerationSpec::Overcomplete {
                states,
                observations,
                actions,
                horizon,
                future_depth,
                min_sigma,
                min_gap,
                noise,
                max_attempts,
                ..
            } => {
                let s = states.draw(1, &mut rng, "states")?;
                let o = observations.draw(1, &mut rng, "observations")?;
                let a = actions.draw(1, &mut rng, "actions")?;
                let h = horizon.draw(1, &mut rng, "horizon")?;
                let mut spec = OvercompleteSpec::new(s, o, a, h, future_depth);
                if let Some(v) = min_sigma {
                    spec = spec.min_sigma(v);
                }
                if let Some(v) = min_gap {
                    spec = spec.min_gap(v);
                }
                if let Some(v) = noise {
                    spec = spec.noise(v);
                }
                if let Some(v) = max_attempts {
                    spec = spec.max_attempts(v);
                }
                ConcreteSpec::Overcomplete(spec)
            }
            GenerationSpec::Gaussian {
                states,
                obs_dim,
                actions,
                horizon,
                min_sigma,
                min_gap,
                noise,
                mean_scale,
                max_attempts,
                ..
            } => {
                let s = states.draw(1, &mut rng, "states")?;
                let o = obs_dim.draw(1, &mut rng, "obs_dim")?;
                let a = actions.draw(1, &mut rng, "actions")?;
                let h = horizon.draw(1, &mut rng, "horizon")?;
                let mut spec = GaussianSpec::new(s, o, a, h);
                if let Some(v) = min_sigma {
                    spec = spec.min_sigma(v);
                }
                if let Some(v) = min_gap {
                    spec = spec.min_gap(v);
                }
                if let Some(v) = noise {
                    spec = spec.noise(v);
                }
                if let Some(v) = mean_scale {
                    spec = spec.mean_scale(v);
                }
                if let Some(v) = max_attempts {
                    spec = spec.max_attempts(v);
                }
                ConcreteSpec::Gaussian(spec)
            }
        })
    }

    pub fn generate(&self, seed: u64) -> Result<Environment> {
        let env_seed = self.env_seed(seed);
        Ok(match self.concrete(seed)? {
            ConcreteSpec::Tabular(spec) => make_random_tabular(&spec, env_seed)?.into(),
            ConcreteSpec::Overcomplete(spec) => make_overcomplete(&spec, env_seed)?.into(),
            ConcreteSpec::Gaussian(spec) => make_gaussian(&spec, env_seed)?.into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentSource {
    Generate(GenerationSpec),
    /// Serialized environment document; relative paths resolve against the
    /// directory of the config file.
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierChoice {
    Practical,
    Unit,
    Custom(Multipliers),
}

impl MultiplierChoice {
    pub fn multipliers(self) -> Multipliers {
        match self {
            MultiplierChoice::Practical => Multipliers::PRACTICAL,
            MultiplierChoice::Unit => Multipliers::UNIT,
            MultiplierChoice::Custom(m) => m,
        }
    }
}

fn practical() -> MultiplierChoice {
    MultiplierChoice::Practical
}

fn default_delta() -> f64 {
    0.05
}

/// Parameters derived from the environment's gap and conditioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoRequest {
    #[serde(default = "practical")]
    pub multipliers: MultiplierChoice,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Defaults to the environment's declared `K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Defaults to the budget `N'`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_bad_events: Option<usize>,
}

impl Default for AutoRequest {
    fn default() -> Self {
        AutoRequest {
            multipliers: practical(),
            delta: default_delta(),
            future_depth: None,
            lambda: None,
            mode: None,
            max_bad_events: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmSpec {
    Explicit(EqdpConfig),
    Auto(AutoRequest),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv]
}

/// What a budget-exhausted seed does to the exit status.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetPolicy {
    #[default]
    Fail,
    Warn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSource,
    pub algorithm: AlgorithmSpec,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    #[serde(default)]
    pub on_budget_exhausted: BudgetPolicy,
}

impl ExperimentConfig {
    pub fn new(environment: EnvironmentSource, algorithm: AlgorithmSpec, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            environment,
            algorithm,
            seeds: Seeds::List(seeds),
            output_dir: None,
            formats: default_formats(),
            on_budget_exhausted: BudgetPolicy::Fail,
        }
    }

    /// Checks the seed list and makes file paths absolute against `base`.
    pub fn validate(&mut self, base: &Path) -> Result<()> {
        let seeds = self.seeds.to_vec();
        if seeds.is_empty() {
            return Err(HarnessError::Validation(
                "at least one seed is required".into(),
            ));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(HarnessError::Validation("seeds must be distinct".into()));
        }
        if let EnvironmentSource::File(p) = &mut self.environment {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.is_file() {
                return Err(HarnessError::Validation(format!(
                    "environment file {} does not exist",
                    p.display()
                )));
            }
        }
        if let AlgorithmSpec::Explicit(cfg) = &self.algorithm {
            cfg.validate()?;
        }
        if let AlgorithmSpec::Auto(req) = &self.algorithm {
            if !(req.delta > 0.0 && req.delta < 1.0) {
                return Err(HarnessError::Validation(format!(
                    "delta must lie in (0, 1), got {}",
                    req.delta
                )));
            }
        }
        Ok(())
    }
}

/// An experiment template plus a grid of JSON-pointer overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment: Value,
    /// Pointer (e.g. `/environment/generate/horizon`) to candidate values.
    pub grid: BTreeMap<String, Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn parse_experiment(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| HarnessError::config(path, &e))?;
    cfg.validate(&base_dir(path))?;
    Ok(cfg)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    parse_experiment(&read(path)?, path)
}

pub fn load_sweep(path: &Path) -> Result<(SweepConfig, PathBuf)> {
    let text = read(path)?;
    let cfg: SweepConfig =
        serde_json::from_str(&text).map_err(|e| HarnessError::config(path, &e))?;
    Ok((cfg, base_dir(path)))
}
