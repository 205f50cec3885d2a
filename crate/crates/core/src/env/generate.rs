//! Seeded rejection-sampling generators.
//!
//! Every generator is a pure function of its size request and seed: one ChaCha8 stream
//! drives all draws. Components are redrawn until they meet their constraint,
//! and all redraws share a single attempt budget; running out reports the
//! constraint that consumed the most attempts.
//!
//! Reward means are drawn on a dyadic grid of step
//! `g = 2^-floor(log2(1 / min_gap))`, so every `Q*` value is an exact binary
//! fraction and any strictly positive gap is at least `g >= min_gap`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GaussianPomdp, GenerationInfo, OvercompleteTabularPomdp, RewardNoise, TabularPomdp};
use crate::error::{Error, Result};
use crate::estimation::continuations;
use crate::linalg::column_sigma_min;
use crate::oracle::{self, outcome_matrix};
use crate::pomdp::GroundTruth;

pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

/// Largest mixing weight of the random part of a tabular emission column.
const MAX_MIXING: f64 = 0.6;

/// Grid step for reward means guaranteeing gaps of at least `min_gap`.
pub fn reward_grid_step(min_gap: f64) -> f64 {
    let k = (1.0 / min_gap).log2().floor().max(0.0);
    (-k).exp2()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionStyle {
    /// `(1 - u) e_{pi(s)} + u * Dirichlet(1)` with a random injective `pi`.
    Mixed,
    /// Noiseless: `e_{pi(s)}`.
    Dirac,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularSpec {
    pub states: usize,
    pub observations: usize,
    pub actions: usize,
    pub horizon: usize,
    pub min_sigma: f64,
    pub min_gap: f64,
    pub noise: RewardNoise,
    pub emission: EmissionStyle,
    pub max_attempts: usize,
}

impl TabularSpec {
    pub fn new(states: usize, observations: usize, actions: usize, horizon: usize) -> Self {
        TabularSpec {
            states,
            observations,
            actions,
            horizon,
            min_sigma: 0.1,
            min_gap: 0.1,
            noise: RewardNoise::Bernoulli,
            emission: EmissionStyle::Mixed,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn min_sigma(mut self, v: f64) -> Self {
        self.min_sigma = v;
        self
    }

    pub fn min_gap(mut self, v: f64) -> Self {
        self.min_gap = v;
        self
    }

    pub fn noise(mut self, v: RewardNoise) -> Self {
        self.noise = v;
        self
    }

    pub fn emission(mut self, v: EmissionStyle) -> Self {
        self.emission = v;
        self
    }

    pub fn max_attempts(mut self, v: usize) -> Self {
        self.max_attempts = v;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OvercompleteSpec {
    pub states: usize,
    pub observations: usize,
    pub actions: usize,
    pub horizon: usize,
    pub future_depth: usize,
    /// Lower bound on `sigma_min` of the witness outcome matrix at every level.
    pub min_sigma: f64,
    pub min_gap: f64,
    pub noise: RewardNoise,
    pub max_attempts: usize,
}

impl OvercompleteSpec {
    pub fn new(
        states: usize,
        observations: usize,
        actions: usize,
        horizon: usize,
        future_depth: usize,
    ) -> Self {
        OvercompleteSpec {
            states,
            observations,
            actions,
            horizon,
            future_depth,
            min_sigma: 0.1,
            min_gap: 0.1,
            noise: RewardNoise::Bernoulli,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn min_sigma(mut self, v: f64) -> Self {
        self.min_sigma = v;
        self
    }

    pub fn min_gap(mut self, v: f64) -> Self {
        self.min_gap = v;
        self
    }

    pub fn noise(mut self, v: RewardNoise) -> Self {
        self.noise = v;
        self
    }

    pub fn max_attempts(mut self, v: usize) -> Self {
        self.max_attempts = v;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSpec {
    pub states: usize,
    pub obs_dim: usize,
    pub actions: usize,
    pub horizon: usize,
    /// Lower bound on `sigma_min(beta * [mu_1 .. mu_S])` at every level.
    pub min_sigma: f64,
    pub min_gap: f64,
    pub noise: RewardNoise,
    /// Standard deviation of the entries of the emission means.
    pub mean_scale: f64,
    pub max_attempts: usize,
}

impl GaussianSpec {
    pub fn new(states: usize, obs_dim: usize, actions: usize, horizon: usize) -> Self {
        GaussianSpec {
            states,
            obs_dim,
            actions,
            horizon,
            min_sigma: 0.05,
            min_gap: 0.1,
            noise: RewardNoise::Bernoulli,
            mean_scale: 3.0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn min_sigma(mut self, v: f64) -> Self {
        self.min_sigma = v;
        self
    }

    pub fn min_gap(mut self, v: f64) -> Self {
        self.min_gap = v;
        self
    }

    pub fn noise(mut self, v: RewardNoise) -> Self {
        self.noise = v;
        self
    }

    pub fn mean_scale(mut self, v: f64) -> Self {
        self.mean_scale = v;
        self
    }

    pub fn max_attempts(mut self, v: usize) -> Self {
        self.max_attempts = v;
        self
    }
}

/// Shared attempt budget with per-constraint rejection counts.
struct Budget {
    limit: usize,
    used: usize,
    rejections: BTreeMap<&'static str, usize>,
}

impl Budget {
    fn new(limit: usize) -> Self {
        Budget {
            limit,
            used: 0,
            rejections: BTreeMap::new(),
        }
    }

    fn attempt(&mut self) -> Result<()> {
        if self.used >= self.limit {
            let constraint = self
                .rejections
                .iter()
                .max_by_key(|(_, &n)| n)
                .map_or("none", |(c, _)| *c);
            return Err(Error::GenerationInfeasible {
                constraint: constraint.to_string(),
                attempts: self.used,
            });
        }
        self.used += 1;
        Ok(())
    }

    fn reject(&mut self, constraint: &'static str) {
        *self.rejections.entry(constraint).or_default() += 1;
    }
}

fn check_sizes(states: usize, observations: usize, actions: usize, horizon: usize) -> Result<()> {
    if states == 0 || observations == 0 || actions == 0 || horizon == 0 {
        return Err(Error::invalid("S, O, A and H must all be positive"));
    }
    Ok(())
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {v}"
        )))
    }
}

fn random_transitions(
    rng: &mut ChaCha8Rng,
    levels: usize,
    states: usize,
    actions: usize,
) -> Vec<Vec<Vec<usize>>> {
    (0..levels)
        .map(|_| {
            (0..states)
                .map(|_| (0..actions).map(|_| rng.random_range(0..states)).collect())
                .collect()
        })
        .collect()
}

/// A point drawn uniformly from the probability simplex (`Dirichlet(alpha)`).
fn dirichlet(rng: &mut ChaCha8Rng, dim: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut v: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Divides a nonnegative column by its sum so it is stochastic to round-off.
fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let total = col.sum();
        col /= total;
    }
}

fn mixed_emission(
    rng: &mut ChaCha8Rng,
    observations: usize,
    states: usize,
    style: EmissionStyle,
) -> DMatrix<f64> {
    let mut symbols: Vec<usize> = (0..observations).collect();
    symbols.shuffle(rng);
    let u = match style {
        EmissionStyle::Mixed => rng.random::<f64>() * MAX_MIXING,
        EmissionStyle::Dirac => 0.0,
    };
    let mut g = DMatrix::zeros(observations, states);
    for s in 0..states {
        if u > 0.0 {
            for (o, p) in dirichlet(rng, observations, 1.0).into_iter().enumerate() {
                g[(o, s)] = u * p;
            }
        }
        g[(symbols[s], s)] += 1.0 - u;
    }
    normalize_columns(&mut g);
    g
}

fn random_rewards(
    rng: &mut ChaCha8Rng,
    horizon: usize,
    states: usize,
    actions: usize,
    step: f64,
) -> Vec<DMatrix<f64>> {
    let cells = (1.0 / step).round() as usize;
    (0..horizon)
        .map(|_| {
            DMatrix::from_fn(states, actions, |_, _| {
                rng.random_range(0..=cells) as f64 * step
            })
        })
        .collect()
}

/// Redraws the reward tables of `env` until the gap and unique-path
/// constraints hold. `set` installs a table set into the environment.
fn draw_rewards<E: GroundTruth>(
    env: &mut E,
    rng: &mut ChaCha8Rng,
    budget: &mut Budget,
    min_gap: f64,
    set: fn(&mut E, Vec<DMatrix<f64>>),
) -> Result<f64> {
    let step = reward_grid_step(min_gap);
    let (horizon, states, actions) = (env.horizon(), env.state_count(), env.action_count());
    loop {
        budget.attempt()?;
        set(env, random_rewards(rng, horizon, states, actions, step));
        let values = oracle::value_iteration(&*env);
        let gap = match oracle::optimality_gap(&values) {
            Some(g) if g >= min_gap => g,
            _ => {
                budget.reject("optimality gap >= min_gap");
                continue;
            }
        };
        let mut s = env.initial_state();
        let mut unique = true;
        for h in 0..horizon {
            if values.optimal_action_count(h, s) != 1 {
                unique = false;
                break;
            }
            s = env.transition(h, s, values.greedy_action(h, s));
        }
        if !unique {
            budget.reject("unique optimal action sequence");
            continue;
        }
        return Ok(gap);
    }
}

fn info(
    generator: &str,
    seed: u64,
    budget: &Budget,
    min_sigma: f64,
    min_gap: f64,
) -> GenerationInfo {
    GenerationInfo {
        generator: generator.to_string(),
        seed,
        attempts: budget.used,
        min_sigma: Some(min_sigma),
        min_gap: Some(min_gap),
    }
}

/// Random undercomplete tabular environment with `sigma_min(G_h) >= min_sigma`
/// at every level, a strict gap `>= min_gap` and a unique optimal sequence.
pub fn make_random_tabular(spec: &TabularSpec, seed: u64) -> Result<TabularPomdp> {
    let (s, o, a, h) = (spec.states, spec.observations, spec.actions, spec.horizon);
    check_sizes(s, o, a, h)?;
    if s > o {
        return Err(Error::invalid(format!(
            "undercomplete constraint S <= O violated (S = {s}, O = {o})"
        )));
    }
    check_unit_interval("min_sigma", spec.min_sigma)?;
    check_unit_interval("min_gap", spec.min_gap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = Budget::new(spec.max_attempts);
    let transitions = random_transitions(&mut rng, h, s, a);
    let mut emissions = Vec::with_capacity(h);
    for _ in 0..h {
        loop {
            budget.attempt()?;
            let g = mixed_emission(&mut rng, o, s, spec.emission);
            if column_sigma_min(&g) >= spec.min_sigma {
                emissions.push(g);
                break;
            }
            budget.reject("sigma_min(G_h) >= min_sigma");
        }
    }
    let placeholder = vec![DMatrix::zeros(s, a); h];
    let mut env = TabularPomdp::new(transitions, emissions, placeholder, spec.noise)?;
    draw_rewards(&mut env, &mut rng, &mut budget, spec.min_gap, |e, r| {
        e.reward_means = r
    })?;
    env.generation = Some(info("tabular", seed, &budget, spec.min_sigma, spec.min_gap));
    Ok(env)
}

/// Random overcomplete tabular environment (`S > O`) whose `K`-step outcome
/// matrix under the stored witness continuation has
/// `sigma_min >= min_sigma` at every learning level. Emissions and
/// transitions extend `K - 1` levels past the horizon.
pub fn make_overcomplete(spec: &OvercompleteSpec, seed: u64) -> Result<OvercompleteTabularPomdp> {
    let (s, o, a, h, k) = (
        spec.states,
        spec.observations,
        spec.actions,
        spec.horizon,
        spec.future_depth,
    );
    check_sizes(s, o, a, h)?;
    if k < 2 {
        return Err(Error::invalid(format!(
            "future depth K must be at least 2, got {k}"
        )));
    }
    if s <= o {
        return Err(Error::invalid(format!(
            "overcomplete constraint S > O violated (S = {s}, O = {o})"
        )));
    }
    if (o as f64).powi(k as i32) < s as f64 {
        return Err(Error::invalid(format!(
            "O^K >= S violated (O = {o}, K = {k}, S = {s})"
        )));
    }
    check_unit_interval("min_sigma", spec.min_sigma)?;
    check_unit_interval("min_gap", spec.min_gap)?;
    let levels = h + k - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = Budget::new(spec.max_attempts);
    let conts = continuations(a, k - 1);
    let (mut env, witness) = loop {
        budget.attempt()?;
        let transitions = random_transitions(&mut rng, levels, s, a);
        let emissions: Vec<DMatrix<f64>> = (0..levels)
            .map(|_| {
                let mut g = DMatrix::zeros(o, s);
                for col in 0..s {
                    for (row, p) in dirichlet(&mut rng, o, 1.0).into_iter().enumerate() {
                        g[(row, col)] = p;
                    }
                }
                normalize_columns(&mut g);
                g
            })
            .collect();
        let env = TabularPomdp::new(
            transitions,
            emissions,
            vec![DMatrix::zeros(s, a); h],
            spec.noise,
        )?;
        let witness = conts.iter().find(|c| {
            (0..h).all(|level| column_sigma_min(&outcome_matrix(&env, level, c)) >= spec.min_sigma)
        });
        match witness {
            Some(w) => break (env, w.clone()),
            None => budget.reject("K-step full column rank with sigma_min >= min_sigma"),
        }
    };
    draw_rewards(&mut env, &mut rng, &mut budget, spec.min_gap, |e, r| {
        e.reward_means = r
    })?;
    env.generation = Some(info(
        "overcomplete",
        seed,
        &budget,
        spec.min_sigma,
        spec.min_gap,
    ));
    Ok(OvercompleteTabularPomdp {
        base: env,
        future_depth: k,
        witness,
    })
}

/// Random Gaussian-emission environment with `N(0, mean_scale^2)` mean
/// entries and the default feature scale.
pub fn make_gaussian(spec: &GaussianSpec, seed: u64) -> Result<GaussianPomdp> {
    let (s, d, a, h) = (spec.states, spec.obs_dim, spec.actions, spec.horizon);
    check_sizes(s, d, a, h)?;
    if s > d {
        return Err(Error::invalid(format!(
            "left invertibility needs S <= d (S = {s}, d = {d})"
        )));
    }
    check_unit_interval("min_sigma", spec.min_sigma)?;
    check_unit_interval("min_gap", spec.min_gap)?;
    if !(spec.mean_scale > 0.0) {
        return Err(Error::invalid("mean_scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = Budget::new(spec.max_attempts);
    let transitions = random_transitions(&mut rng, h, s, a);
    let mut env = loop {
        budget.attempt()?;
        let means: Vec<DMatrix<f64>> = (0..h)
            .map(|_| {
                DMatrix::from_fn(d, s, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.mean_scale * z
                })
            })
            .collect();
        let env = GaussianPomdp::new(
            transitions.clone(),
            means,
            vec![DMatrix::zeros(s, a); h],
            spec.noise,
            None,
        )?;
        if (0..h).all(|l| column_sigma_min(&env.expected_feature(l)) >= spec.min_sigma) {
            break env;
        }
        budget.reject("sigma_min(beta * mu_h) >= min_sigma");
    };
    draw_rewards(&mut env, &mut rng, &mut budget, spec.min_gap, |e, r| {
        e.reward_means = r
    })?;
    env.generation = Some(info(
        "gaussian",
        seed,
        &budget,
        spec.min_sigma,
        spec.min_gap,
    ));
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use crate::pomdp::Pomdp;

    #[test]
    fn grid_step_clears_gap() {
        assert_eq!(reward_grid_step(0.1), 0.125);
        assert_eq!(reward_grid_step(0.3), 0.5);
        assert_eq!(reward_grid_step(0.5), 0.5);
        assert_eq!(reward_grid_step(0.6), 1.0);
        for g in [0.01, 0.07, 0.1, 0.2, 0.25, 0.33, 0.9] {
            assert!(reward_grid_step(g) >= g);
        }
    }

    #[test]
    fn degenerate_bandit() {
        let env = make_random_tabular(&TabularSpec::new(1, 1, 2, 1), 0).unwrap();
        assert_eq!(env.emission_matrix(0), &DMatrix::identity(1, 1));
        assert_eq!(env.horizon(), 1);
    }

    #[test]
    fn sigma_and_gap_constraints_hold() {
        let spec = TabularSpec::new(3, 4, 2, 3).min_sigma(0.3).min_gap(0.1);
        let env = make_random_tabular(&spec, 7).unwrap();
        let sol = oracle::solve(&env, 1);
        assert!(sol.audit.passed());
        assert!(sol.min_sigma() >= 0.3);
        assert!(sol.gap.unwrap() >= 0.1);
    }

    #[test]
    fn undercomplete_violation_names_constraint() {
        let err = make_random_tabular(&TabularSpec::new(5, 3, 2, 3), 1).unwrap_err();
        assert!(err.to_string().contains("S <= O"), "{err}");
    }

    #[test]
    fn impossible_sigma_exhausts_budget() {
        let spec = TabularSpec::new(3, 3, 2, 2)
            .min_sigma(0.999)
            .max_attempts(50);
        match make_random_tabular(&spec, 1) {
            Err(Error::GenerationInfeasible {
                constraint,
                attempts,
            }) => {
                assert!(constraint.contains("sigma_min"));
                assert_eq!(attempts, 50);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overcomplete_rank_structure() {
        let env = make_overcomplete(&OvercompleteSpec::new(3, 2, 2, 3, 2), 4).unwrap();
        for h in 0..3 {
            assert!(numerical_rank(&env.base.expected_feature(h)) <= 2);
            assert_eq!(
                numerical_rank(&outcome_matrix(&env.base, h, &env.witness)),
                3
            );
        }
    }

    #[test]
    fn overcomplete_preconditions() {
        assert!(make_overcomplete(&OvercompleteSpec::new(3, 2, 2, 3, 1), 0).is_err());
        assert!(make_overcomplete(&OvercompleteSpec::new(2, 2, 2, 3, 2), 0).is_err());
        assert!(make_overcomplete(&OvercompleteSpec::new(5, 2, 2, 3, 2), 0).is_err());
    }

    #[test]
    fn gaussian_generation_passes_audit() {
        let env = make_gaussian(&GaussianSpec::new(2, 3, 2, 2), 5).unwrap();
        assert!(oracle::audit(&env, 1).passed());
    }
}
