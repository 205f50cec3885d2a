use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::tabular::sample_reward;
use super::{GenerationInfo, RewardNoise};
use crate::error::{Error, Result};
use crate::pomdp::{GroundTruth, Observation, Pomdp};

/// Multiple of `sqrt(d)` added to the largest mean norm when choosing the
/// feature scale.
pub const FEATURE_SCALE_SIGMAS: f64 = 6.0;

/// Discrete latent states with `N(mu_{s,h}, I)` observations in `R^d`.
///
/// The observation feature is `psi(o) = beta * o`, with `beta` chosen so that
/// `||psi(o)|| <= 1` except with negligible probability; the rare violations
/// are projected back onto the unit ball and reported as clipped.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPomdp {
    pub(crate) states: usize,
    pub(crate) actions: usize,
    pub(crate) horizon: usize,
    pub(crate) obs_dim: usize,
    pub(crate) transitions: Vec<Vec<Vec<usize>>>,
    pub(crate) means: Vec<DMatrix<f64>>,
    pub(crate) reward_means: Vec<DMatrix<f64>>,
    pub(crate) reward_noise: RewardNoise,
    pub(crate) beta: f64,
    pub generation: Option<GenerationInfo>,
}

/// `1 / (max_s ||mu_s|| + 6 sqrt(d))` over all levels.
pub fn default_feature_scale(means: &[DMatrix<f64>]) -> f64 {
    let d = means.first().map_or(1, |m| m.nrows()) as f64;
    let max_norm = means
        .iter()
        .flat_map(|m| m.column_iter().map(|c| c.norm()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    1.0 / (max_norm + FEATURE_SCALE_SIGMAS * d.sqrt())
}

impl GaussianPomdp {
    pub fn new(
        transitions: Vec<Vec<Vec<usize>>>,
        means: Vec<DMatrix<f64>>,
        reward_means: Vec<DMatrix<f64>>,
        reward_noise: RewardNoise,
        beta: Option<f64>,
    ) -> Result<Self> {
        let horizon = reward_means.len();
        if horizon == 0 || means.len() != horizon || transitions.len() != horizon {
            return Err(Error::invalid(
                "gaussian environment needs one mean matrix, transition table and reward table per level",
            ));
        }
        let (obs_dim, states) = means[0].shape();
        let actions = reward_means[0].ncols();
        if obs_dim == 0 || states == 0 || actions == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if means.iter().any(|m| m.shape() != (obs_dim, states)) {
            return Err(Error::invalid("mean matrices must share one shape"));
        }
        for (h, table) in transitions.iter().enumerate() {
            if table.len() != states
                || table
                    .iter()
                    .any(|row| row.len() != actions || row.iter().any(|&n| n >= states))
            {
                return Err(Error::invalid(format!(
                    "transition table at level {h} is malformed"
                )));
            }
        }
        for r in &reward_means {
            if r.shape() != (states, actions) || r.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(
                    "reward tables must be S x A with means in [0, 1]",
                ));
            }
        }
        let beta = beta.unwrap_or_else(|| default_feature_scale(&means));
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("feature scale must be positive"));
        }
        Ok(GaussianPomdp {
            states,
            actions,
            horizon,
            obs_dim,
            transitions,
            means,
            reward_means,
            reward_noise,
            beta,
            generation: None,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn mean_matrix(&self, level: usize) -> &DMatrix<f64> {
        &self.means[level]
    }

    pub fn reward_noise(&self) -> RewardNoise {
        self.reward_noise
    }

    fn write_scaled(&self, obs: &Observation, out: &mut [f64]) -> bool {
        match obs {
            Observation::Vector(o) => {
                let mut norm_sq = 0.0;
                for (dst, &x) in out.iter_mut().zip(o) {
                    *dst = self.beta * x;
                    norm_sq += *dst * *dst;
                }
                if norm_sq > 1.0 {
                    let scale = norm_sq.sqrt().recip();
                    out.iter_mut().for_each(|v| *v *= scale);
                    true
                } else {
                    false
                }
            }
            _ => {
                out.fill(0.0);
                false
            }
        }
    }
}

impl Pomdp for GaussianPomdp {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn action_count(&self) -> usize {
        self.actions
    }

    fn state_count(&self) -> usize {
        self.states
    }

    fn transition(&self, level: usize, state: usize, action: usize) -> usize {
        self.transitions[level][state][action]
    }

    fn sample_emission(&self, level: usize, state: usize, rng: &mut dyn RngCore) -> Observation {
        let mu = self.means[level].column(state);
        Observation::Vector(
            mu.iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    m + z
                })
                .collect(),
        )
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
        self.obs_dim
    }

    fn write_feature(&self, obs: &Observation, out: &mut [f64]) -> bool {
        self.write_scaled(obs, out)
    }

    /// Blocks `psi(o_k) / sqrt(K)` concatenated; terminal padding is a zero block.
    fn tuple_feature_dim(&self, depth: usize) -> usize {
        self.obs_dim * depth
    }

    fn write_tuple_feature(&self, obs: &[Observation], out: &mut [f64]) -> bool {
        if obs.len() == 1 {
            return self.write_scaled(&obs[0], out);
        }
        let scale = (obs.len() as f64).sqrt().recip();
        let mut clipped = false;
        for (o, block) in obs.iter().zip(out.chunks_mut(self.obs_dim)) {
            clipped |= self.write_scaled(o, block);
            block.iter_mut().for_each(|v| *v *= scale);
        }
        clipped
    }
}

impl GroundTruth for GaussianPomdp {
    fn reward_mean(&self, level: usize, state: usize, action: usize) -> f64 {
        self.reward_means[level][(state, action)]
    }

    /// `beta * [mu_1, ..., mu_S]`; clipping of rare outliers is ignored.
    fn expected_feature(&self, level: usize) -> DMatrix<f64> {
        &self.means[level] * self.beta
    }

    fn expected_tuple_feature(
        &self,
        level: usize,
        state: usize,
        continuation: &[usize],
    ) -> DVector<f64> {
        let depth = continuation.len() + 1;
        let mut out = DVector::zeros(self.obs_dim * depth);
        let scale = if depth == 1 {
            1.0
        } else {
            (depth as f64).sqrt().recip()
        };
        let mut s = state;
        for k in 0..depth {
            let l = level + k;
            if l >= self.horizon {
                break;
            }
            if k > 0 {
                s = self.transitions[l - 1][s][continuation[k - 1]];
            }
            let block = self.means[l].column(s) * (self.beta * scale);
            out.rows_mut(k * self.obs_dim, self.obs_dim)
                .copy_from(&block);
        }
        out
    }
}
