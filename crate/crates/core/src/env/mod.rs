//! Concrete environment families: undercomplete tabular, Gaussian-emission and
//! overcomplete tabular POMDPs, their seeded generators and the environment
//! document format.

mod document;
mod gaussian;
mod generate;
mod tabular;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::pomdp::{GroundTruth, Observation, Pomdp};

pub use document::{deserialize, serialize, SCHEMA_VERSION};
pub use gaussian::{default_feature_scale, GaussianPomdp, FEATURE_SCALE_SIGMAS};
pub use generate::{
    make_gaussian, make_overcomplete, make_random_tabular, reward_grid_step, EmissionStyle,
    GaussianSpec, OvercompleteSpec, TabularSpec, DEFAULT_MAX_ATTEMPTS,
};
pub use tabular::{OvercompleteTabularPomdp, TabularPomdp, STOCHASTIC_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardNoise {
    Deterministic,
    Bernoulli,
}

/// How an environment was produced; carried through serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub generator: String,
    pub seed: u64,
    pub attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Tabular,
    Gaussian,
    Overcomplete,
}

/// Any environment the crate can generate, serialize and audit.
#[derive(Clone, Debug, PartialEq)]
pub enum Environment {
    Tabular(TabularPomdp),
    Gaussian(GaussianPomdp),
    Overcomplete(OvercompleteTabularPomdp),
}

impl Environment {
    pub fn kind(&self) -> EnvironmentKind {
        match self {
            Environment::Tabular(_) => EnvironmentKind::Tabular,
            Environment::Gaussian(_) => EnvironmentKind::Gaussian,
            Environment::Overcomplete(_) => EnvironmentKind::Overcomplete,
        }
    }

    /// Declared future depth `K` (1 unless overcomplete).
    pub fn future_depth(&self) -> usize {
        match self {
            Environment::Overcomplete(e) => e.future_depth,
            _ => 1,
        }
    }

    pub fn generation(&self) -> Option<&GenerationInfo> {
        match self {
            Environment::Tabular(e) => e.generation.as_ref(),
            Environment::Gaussian(e) => e.generation.as_ref(),
            Environment::Overcomplete(e) => e.base.generation.as_ref(),
        }
    }

    fn inner(&self) -> &dyn GroundTruth {
        match self {
            Environment::Tabular(e) => e,
            Environment::Gaussian(e) => e,
            Environment::Overcomplete(e) => &e.base,
        }
    }
}

impl From<TabularPomdp> for Environment {
    fn from(e: TabularPomdp) -> Self {
        Environment::Tabular(e)
    }
}

impl From<GaussianPomdp> for Environment {
    fn from(e: GaussianPomdp) -> Self {
        Environment::Gaussian(e)
    }
}

impl From<OvercompleteTabularPomdp> for Environment {
    fn from(e: OvercompleteTabularPomdp) -> Self {
        Environment::Overcomplete(e)
    }
}

impl Pomdp for Environment {
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn action_count(&self) -> usize {
        self.inner().action_count()
    }
    fn state_count(&self) -> usize {
        self.inner().state_count()
    }
    fn initial_state(&self) -> usize {
        self.inner().initial_state()
    }
    fn transition_levels(&self) -> usize {
        self.inner().transition_levels()
    }
    fn emission_levels(&self) -> usize {
        self.inner().emission_levels()
    }
    fn transition(&self, level: usize, state: usize, action: usize) -> usize {
        self.inner().transition(level, state, action)
    }
    fn sample_emission(&self, level: usize, state: usize, rng: &mut dyn RngCore) -> Observation {
        self.inner().sample_emission(level, state, rng)
    }
    fn sample_reward(
        &self,
        level: usize,
        state: usize,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> f64 {
        self.inner().sample_reward(level, state, action, rng)
    }
    fn feature_dim(&self) -> usize {
        self.inner().feature_dim()
    }
    fn write_feature(&self, obs: &Observation, out: &mut [f64]) -> bool {
        self.inner().write_feature(obs, out)
    }
    fn tuple_feature_dim(&self, depth: usize) -> usize {
        self.inner().tuple_feature_dim(depth)
    }
    fn write_tuple_feature(&self, obs: &[Observation], out: &mut [f64]) -> bool {
        self.inner().write_tuple_feature(obs, out)
    }
}

impl GroundTruth for Environment {
    fn reward_mean(&self, level: usize, state: usize, action: usize) -> f64 {
        self.inner().reward_mean(level, state, action)
    }
    fn expected_feature(&self, level: usize) -> DMatrix<f64> {
        self.inner().expected_feature(level)
    }
    fn expected_tuple_feature(
        &self,
        level: usize,
        state: usize,
        continuation: &[usize],
    ) -> DVector<f64> {
        self.inner()
            .expected_tuple_feature(level, state, continuation)
    }
    fn state_features(&self) -> DMatrix<f64> {
        self.inner().state_features()
    }
}
