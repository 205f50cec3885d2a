use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{GenerationInfo, RewardNoise};
use crate::error::{Error, Result};
use crate::pomdp::{GroundTruth, Observation, Pomdp};

/// Discrete-observation POMDP with one-hot observation features.
///
/// `emissions[h]` is the `O x S` column-stochastic matrix `G_h`. Levels at and
/// beyond `horizon` (there are `extension_levels` of them) have emissions and
/// transitions but no rewards; they exist so that multi-step futures started at
/// the last learning levels can still be observed.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPomdp {
    pub(crate) states: usize,
    pub(crate) observations: usize,
    pub(crate) actions: usize,
    pub(crate) horizon: usize,
    pub(crate) extension_levels: usize,
    pub(crate) transitions: Vec<Vec<Vec<usize>>>,
    pub(crate) emissions: Vec<DMatrix<f64>>,
    pub(crate) reward_means: Vec<DMatrix<f64>>,
    pub(crate) reward_noise: RewardNoise,
    pub generation: Option<GenerationInfo>,
}

/// Tolerance on emission column sums.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

impl TabularPomdp {
    /// Builds and validates an environment.
    ///
    /// `transitions[h][s][a]` for `h < horizon + extension_levels`,
    /// `emissions[h]` (`O x S`) for the same levels, and `reward_means[h]`
    /// (`S x A`) for `h < horizon`.
    pub fn new(
        transitions: Vec<Vec<Vec<usize>>>,
        emissions: Vec<DMatrix<f64>>,
        reward_means: Vec<DMatrix<f64>>,
        reward_noise: RewardNoise,
    ) -> Result<Self> {
        let horizon = reward_means.len();
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        let levels = emissions.len();
        if levels < horizon || transitions.len() != levels {
            return Err(Error::invalid(format!(
                "need matching emission ({levels}) and transition ({}) levels, at least the horizon {horizon}",
                transitions.len()
            )));
        }
        let observations = emissions[0].nrows();
        let states = emissions[0].ncols();
        let actions = reward_means[0].ncols();
        if states == 0 || observations == 0 || actions == 0 {
            return Err(Error::invalid(
                "state, observation and action counts must be positive",
            ));
        }
        for (h, g) in emissions.iter().enumerate() {
            if g.shape() != (observations, states) {
                return Err(Error::invalid(format!(
                    "emission matrix at level {h} has wrong shape"
                )));
            }
            for (s, col) in g.column_iter().enumerate() {
                if col.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::invalid(format!(
                        "emission column ({h}, {s}) has a negative or non-finite entry"
                    )));
                }
                if (col.sum() - 1.0).abs() > STOCHASTIC_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "emission column ({h}, {s}) sums to {}",
                        col.sum()
                    )));
                }
            }
        }
        for (h, table) in transitions.iter().enumerate() {
            if table.len() != states || table.iter().any(|row| row.len() != actions) {
                return Err(Error::invalid(format!(
                    "transition table at level {h} has wrong shape"
                )));
            }
            if table.iter().flatten().any(|&next| next >= states) {
                return Err(Error::invalid(format!(
                    "transition at level {h} leaves the state space"
                )));
            }
        }
        for (h, r) in reward_means.iter().enumerate() {
            if r.shape() != (states, actions) {
                return Err(Error::invalid(format!(
                    "reward table at level {h} has wrong shape"
                )));
            }
            if r.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!(
                    "reward mean at level {h} outside [0, 1]"
                )));
            }
        }
        Ok(TabularPomdp {
            states,
            observations,
            actions,
            horizon,
            extension_levels: levels - horizon,
            transitions,
            emissions,
            reward_means,
            reward_noise,
            generation: None,
        })
    }

    pub fn observation_count(&self) -> usize {
        self.observations
    }

    pub fn extension_levels(&self) -> usize {
        self.extension_levels
    }

    pub fn reward_noise(&self) -> RewardNoise {
        self.reward_noise
    }

    pub fn emission_matrix(&self, level: usize) -> &DMatrix<f64> {
        &self.emissions[level]
    }

    pub fn reward_table(&self, level: usize) -> &DMatrix<f64> {
        &self.reward_means[level]
    }

    pub fn transition_table(&self, level: usize) -> &[Vec<usize>] {
        &self.transitions[level]
    }

    /// Symbol base used to index observation tuples: one extra terminal symbol
    /// when a `depth`-step future can run past the last emission level.
    fn tuple_base(&self, depth: usize) -> usize {
        if self.needs_padding(depth) {
            self.observations + 1
        } else {
            self.observations
        }
    }

    fn needs_padding(&self, depth: usize) -> bool {
        depth > self.extension_levels + 1
    }

    fn symbol_index(&self, obs: &Observation) -> usize {
        match obs {
            Observation::Symbol(o) => *o,
            Observation::Terminal => self.observations,
            Observation::Vector(_) => panic!("vector observation in a tabular environment"),
        }
    }

    fn tuple_distribution(
        &self,
        level: usize,
        state: usize,
        continuation: &[usize],
        base: usize,
        prefix: usize,
        mass: f64,
        out: &mut DVector<f64>,
    ) {
        let index = |sym: usize| prefix * base + sym;
        if level >= self.horizon + self.extension_levels {
            // padded tail: terminal symbols with probability one
            let idx = continuation
                .iter()
                .fold(index(self.observations), |acc, _| {
                    acc * base + self.observations
                });
            out[idx] += mass;
            return;
        }
        let column = self.emissions[level].column(state);
        for (o, &p) in column.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            match continuation.split_first() {
                None => out[index(o)] += mass * p,
                Some((&a, rest)) => {
                    let next = self.transitions[level][state][a];
                    self.tuple_distribution(level + 1, next, rest, base, index(o), mass * p, out);
                }
            }
        }
    }
}

pub(crate) fn sample_reward(noise: RewardNoise, mean: f64, rng: &mut dyn RngCore) -> f64 {
    match noise {
        RewardNoise::Deterministic => mean,
        RewardNoise::Bernoulli => {
            if rng.random::<f64>() < mean {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl Pomdp for TabularPomdp {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn action_count(&self) -> usize {
        self.actions
    }

    fn state_count(&self) -> usize {
        self.states
    }

    fn transition_levels(&self) -> usize {
        self.horizon + self.extension_levels
    }

    fn emission_levels(&self) -> usize {
        self.horizon + self.extension_levels
    }

    fn transition(&self, level: usize, state: usize, action: usize) -> usize {
        self.transitions[level][state][action]
    }

    fn sample_emission(&self, level: usize, state: usize, rng: &mut dyn RngCore) -> Observation {
        let column = self.emissions[level].column(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (o, &p) in column.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = o;
                if u < acc {
                    return Observation::Symbol(o);
                }
            }
        }
        Observation::Symbol(last)
    }

    fn sample_reward(
        &self,
        level: usize,
        state: usize,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> f64 {
        sample_reward(
            self.reward_noise,
            self.reward_means[level][(state, action)],
            rng,
        )
    }

    fn feature_dim(&self) -> usize {
        self.observations
    }

    fn write_feature(&self, obs: &Observation, out: &mut [f64]) -> bool {
        out.fill(0.0);
        if let Observation::Symbol(o) = obs {
            out[*o] = 1.0;
        }
        false
    }

    fn tuple_feature_dim(&self, depth: usize) -> usize {
        self.tuple_base(depth).pow(depth as u32)
    }

    fn write_tuple_feature(&self, obs: &[Observation], out: &mut [f64]) -> bool {
        if obs.len() == 1 {
            return self.write_feature(&obs[0], out);
        }
        let base = self.tuple_base(obs.len());
        out.fill(0.0);
        let idx = obs
            .iter()
            .fold(0, |acc, o| acc * base + self.symbol_index(o));
        out[idx] = 1.0;
        false
    }
}

impl GroundTruth for TabularPomdp {
    fn reward_mean(&self, level: usize, state: usize, action: usize) -> f64 {
        self.reward_means[level][(state, action)]
    }

    fn expected_feature(&self, level: usize) -> DMatrix<f64> {
        self.emissions[level].clone()
    }

    fn expected_tuple_feature(
        &self,
        level: usize,
        state: usize,
        continuation: &[usize],
    ) -> DVector<f64> {
        let depth = continuation.len() + 1;
        let base = self.tuple_base(depth);
        let mut out = DVector::zeros(self.tuple_feature_dim(depth));
        if depth == 1 {
            out.copy_from(&self.emissions[level].column(state));
            return out;
        }
        self.tuple_distribution(level, state, continuation, base, 0, 1.0, &mut out);
        out
    }
}

/// Tabular environment with `S > O` whose `depth`-step futures under the
/// stored witness continuation identify the latent state.
#[derive(Clone, Debug, PartialEq)]
pub struct OvercompleteTabularPomdp {
    pub base: TabularPomdp,
    pub future_depth: usize,
    /// Continuation `a_diamond` of length `future_depth - 1`; auditor-only.
    pub witness: Vec<usize>,
}
