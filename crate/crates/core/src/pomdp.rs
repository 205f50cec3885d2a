//! POMDP data model and the generative (reset-and-execute) access layer.
//!
//! Environments implement [`Pomdp`] (sampling plus structure) and, when their
//! ground truth is available, [`GroundTruth`]. Learners never see either trait
//! directly: they are handed a [`SampleAccess`] implementation, normally a
//! [`Simulator`], which can only reset to `s_0`, execute an action sequence and
//! return an observation or a reward. Every such call is charged to a shared
//! [`SampleLedger`].
//!
//! Randomness is counter based. A [`Simulator`] derives one ChaCha key from its
//! master seed; episode `e` uses ChaCha stream `e`, and the draw made at level
//! `t` of that episode starts at word position `t << 32`. Any draw is therefore
//! a pure function of `(master seed, episode, step)`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An open-loop action prefix `a_{0:h-1}`; its length is the level it reaches.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSequence(Vec<usize>);

impl ActionSequence {
    pub fn new(actions: Vec<usize>) -> Self {
        ActionSequence(actions)
    }

    pub fn empty() -> Self {
        ActionSequence(Vec::new())
    }

    /// Level reached by executing the sequence from `s_0`.
    pub fn level(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// A copy of this sequence with `action` appended.
    pub fn extended(&self, action: usize) -> Self {
        let mut actions = Vec::with_capacity(self.0.len() + 1);
        actions.extend_from_slice(&self.0);
        actions.push(action);
        ActionSequence(actions)
    }

    pub fn validate(&self, action_count: usize, horizon: usize) -> Result<()> {
        if self.0.len() > horizon {
            return Err(Error::SequenceTooLong {
                len: self.0.len(),
                horizon,
            });
        }
        if let Some(&action) = self.0.iter().find(|&&a| a >= action_count) {
            return Err(Error::InvalidAction {
                action,
                count: action_count,
            });
        }
        Ok(())
    }
}

impl From<Vec<usize>> for ActionSequence {
    fn from(actions: Vec<usize>) -> Self {
        ActionSequence(actions)
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "]")
    }
}

/// One emitted observation.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Symbol(usize),
    Vector(Vec<f64>),
    /// Absorbing padding symbol emitted past the last level an environment defines.
    Terminal,
}

/// Opaque latent state reached by an action sequence. Only oracle and test code
/// can obtain one (through [`Simulator::reach`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatentState {
    pub level: usize,
    pub index: usize,
}

/// Environment interface: structure plus per-level samplers.
///
/// Levels `0..horizon()` carry rewards. Some environments define emissions and
/// transitions past the horizon (`emission_levels() > horizon()`) so that
/// multi-step futures can be observed at the last learning levels.
pub trait Pomdp: Send + Sync {
    fn horizon(&self) -> usize;
    fn action_count(&self) -> usize;
    fn state_count(&self) -> usize;

    fn initial_state(&self) -> usize {
        0
    }

    /// Number of levels with a defined transition map (at least `horizon()`).
    fn transition_levels(&self) -> usize {
        self.horizon()
    }

    /// Number of levels with a defined emission law (at least `horizon()`).
    fn emission_levels(&self) -> usize {
        self.horizon()
    }

    fn transition(&self, level: usize, state: usize, action: usize) -> usize;

    fn sample_emission(&self, level: usize, state: usize, rng: &mut dyn RngCore) -> Observation;

    /// Draw in `[0, 1]`.
    fn sample_reward(
        &self,
        level: usize,
        state: usize,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> f64;

    /// Dimension `d` of the observation feature `psi`.
    fn feature_dim(&self) -> usize;

    /// Writes `psi(obs)` into `out`; returns `true` if the raw feature had to be
    /// clipped to the unit ball.
    fn write_feature(&self, obs: &Observation, out: &mut [f64]) -> bool;

    /// Dimension of the feature over observation `depth`-tuples.
    fn tuple_feature_dim(&self, depth: usize) -> usize;

    fn write_tuple_feature(&self, obs: &[Observation], out: &mut [f64]) -> bool;
}

/// Ground truth of a fully specified environment. Only the oracle uses this.
pub trait GroundTruth: Pomdp {
    fn reward_mean(&self, level: usize, state: usize, action: usize) -> f64;

    /// Embedding matrix `G_h` (d x S): column `s` is `E[psi(o) | s]` at `level`.
    fn expected_feature(&self, level: usize) -> DMatrix<f64>;

    /// Exact `E[psi_K(o_{h:h+K-1}) | s_h = state; continuation]` with
    /// `K = continuation.len() + 1`.
    fn expected_tuple_feature(
        &self,
        level: usize,
        state: usize,
        continuation: &[usize],
    ) -> DVector<f64>;

    /// Latent-state feature `phi`, one column per state. One-hot by default.
    fn state_features(&self) -> DMatrix<f64> {
        DMatrix::identity(self.state_count(), self.state_count())
    }
}

/// Counters of generative-model usage. All counters only ever grow.
#[derive(Debug, Default)]
pub struct SampleLedger {
    episodes: AtomicU64,
    steps: AtomicU64,
    obs_samples: AtomicU64,
    reward_samples: AtomicU64,
    clipped_features: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub episodes: u64,
    pub steps: u64,
    pub obs_samples: u64,
    pub reward_samples: u64,
    #[serde(default)]
    pub clipped_features: u64,
}

impl LedgerSnapshot {
    pub fn delta(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            episodes: self.episodes - earlier.episodes,
            steps: self.steps - earlier.steps,
            obs_samples: self.obs_samples - earlier.obs_samples,
            reward_samples: self.reward_samples - earlier.reward_samples,
            clipped_features: self.clipped_features - earlier.clipped_features,
        }
    }
}

impl SampleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn charge(&self, steps: u64, observations: u64, rewards: u64) {
        self.episodes.fetch_add(1, Ordering::Relaxed);
        self.steps.fetch_add(steps, Ordering::Relaxed);
        self.obs_samples.fetch_add(observations, Ordering::Relaxed);
        self.reward_samples.fetch_add(rewards, Ordering::Relaxed);
    }

    fn record_clip(&self) {
        self.clipped_features.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            episodes: self.episodes.load(Ordering::Relaxed),
            steps: self.steps.load(Ordering::Relaxed),
            obs_samples: self.obs_samples.load(Ordering::Relaxed),
            reward_samples: self.reward_samples.load(Ordering::Relaxed),
            clipped_features: self.clipped_features.load(Ordering::Relaxed),
        }
    }
}

/// Random stream of one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: [u8; 32],
    episode: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, episode: u64) -> Self {
        RngStream {
            key: derive_key(master_seed),
            episode,
        }
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// Generator positioned at the draws reserved for `step` of this episode.
    pub fn at_step(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.episode);
        rng.set_word_pos(u128::from(step) << 32);
        rng
    }
}

fn derive_key(master_seed: u64) -> [u8; 32] {
    ChaCha8Rng::seed_from_u64(master_seed).get_seed()
}

/// Learner-facing access: sampling only, no latent state.
pub trait SampleAccess {
    fn horizon(&self) -> usize;
    fn action_count(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn tuple_feature_dim(&self, depth: usize) -> usize;

    /// `psi(obs)` written into `out`.
    fn write_feature(&self, obs: &Observation, out: &mut [f64]);
    fn write_tuple_feature(&self, obs: &[Observation], out: &mut [f64]);

    /// Stream for the next fresh episode.
    fn fresh_stream(&self) -> RngStream;

    fn sample_observation(&self, seq: &ActionSequence, stream: &RngStream) -> Result<Observation>;

    fn sample_reward(&self, seq: &ActionSequence, action: usize, stream: &RngStream)
        -> Result<f64>;

    /// Executes `seq`, observes, then executes `continuation` observing after
    /// every action: `continuation.len() + 1` observations in total, padded with
    /// [`Observation::Terminal`] past the environment's last emission level.
    fn sample_future(
        &self,
        seq: &ActionSequence,
        continuation: &[usize],
        stream: &RngStream,
    ) -> Result<Vec<Observation>>;

    /// `(steps, observations)` charged for one `sample_future` episode at `level`
    /// with a `depth`-observation future.
    fn future_charge(&self, level: usize, depth: usize) -> (u64, u64);

    fn ledger(&self) -> LedgerSnapshot;
}

/// Generative model around an environment: seeded streams plus the ledger.
pub struct Simulator<'e, E: Pomdp + ?Sized> {
    env: &'e E,
    key: [u8; 32],
    next_episode: AtomicU64,
    ledger: SampleLedger,
}

impl<'e, E: Pomdp + ?Sized> Simulator<'e, E> {
    pub fn new(env: &'e E, master_seed: u64) -> Self {
        Simulator {
            env,
            key: derive_key(master_seed),
            next_episode: AtomicU64::new(0),
            ledger: SampleLedger::new(),
        }
    }

    pub fn sample_ledger(&self) -> &SampleLedger {
        &self.ledger
    }

    fn check(&self, seq: &ActionSequence) -> Result<()> {
        seq.validate(self.env.action_count(), self.env.horizon())
    }

    fn walk(&self, seq: &ActionSequence) -> usize {
        seq.as_slice()
            .iter()
            .enumerate()
            .fold(self.env.initial_state(), |s, (h, &a)| {
                self.env.transition(h, s, a)
            })
    }

    /// Resets, executes `seq` and returns the latent state reached. Charged as
    /// one episode of `seq.level()` steps.
    pub fn reach(&self, seq: &ActionSequence) -> Result<LatentState> {
        self.check(seq)?;
        let index = self.walk(seq);
        self.ledger.charge(seq.level() as u64, 0, 0);
        Ok(LatentState {
            level: seq.level(),
            index,
        })
    }
}

impl<E: Pomdp + ?Sized> SampleAccess for Simulator<'_, E> {
    fn horizon(&self) -> usize {
        self.env.horizon()
    }

    fn action_count(&self) -> usize {
        self.env.action_count()
    }

    fn feature_dim(&self) -> usize {
        self.env.feature_dim()
    }

    fn tuple_feature_dim(&self, depth: usize) -> usize {
        self.env.tuple_feature_dim(depth)
    }

    fn write_feature(&self, obs: &Observation, out: &mut [f64]) {
        if self.env.write_feature(obs, out) {
            self.ledger.record_clip();
        }
    }

    fn write_tuple_feature(&self, obs: &[Observation], out: &mut [f64]) {
        if self.env.write_tuple_feature(obs, out) {
            self.ledger.record_clip();
        }
    }

    fn fresh_stream(&self) -> RngStream {
        RngStream {
            key: self.key,
            episode: self.next_episode.fetch_add(1, Ordering::Relaxed),
        }
    }

    fn sample_observation(&self, seq: &ActionSequence, stream: &RngStream) -> Result<Observation> {
        self.check(seq)?;
        let h = seq.level();
        if h >= self.env.emission_levels() {
            return Err(Error::HorizonExceeded {
                level: h,
                horizon: self.env.emission_levels(),
            });
        }
        let state = self.walk(seq);
        let obs = self
            .env
            .sample_emission(h, state, &mut stream.at_step(h as u64));
        self.ledger.charge(h as u64, 1, 0);
        Ok(obs)
    }

    fn sample_reward(
        &self,
        seq: &ActionSequence,
        action: usize,
        stream: &RngStream,
    ) -> Result<f64> {
        self.check(seq)?;
        let h = seq.level();
        if h >= self.env.horizon() {
            return Err(Error::HorizonExceeded {
                level: h,
                horizon: self.env.horizon(),
            });
        }
        if action >= self.env.action_count() {
            return Err(Error::InvalidAction {
                action,
                count: self.env.action_count(),
            });
        }
        let state = self.walk(seq);
        let r = self
            .env
            .sample_reward(h, state, action, &mut stream.at_step(h as u64));
        self.ledger.charge(h as u64 + 1, 0, 1);
        Ok(r)
    }

    fn sample_future(
        &self,
        seq: &ActionSequence,
        continuation: &[usize],
        stream: &RngStream,
    ) -> Result<Vec<Observation>> {
        self.check(seq)?;
        if let Some(&action) = continuation.iter().find(|&&a| a >= self.env.action_count()) {
            return Err(Error::InvalidAction {
                action,
                count: self.env.action_count(),
            });
        }
        let h = seq.level();
        if h >= self.env.horizon() {
            return Err(Error::HorizonExceeded {
                level: h,
                horizon: self.env.horizon(),
            });
        }
        let mut state = self.walk(seq);
        let mut steps = h as u64;
        let mut emitted = 0u64;
        let mut out = Vec::with_capacity(continuation.len() + 1);
        let mut alive = true;
        for k in 0..=continuation.len() {
            let level = h + k;
            alive = alive
                && level < self.env.emission_levels()
                && (k == 0 || level - 1 < self.env.transition_levels());
            if !alive {
                out.push(Observation::Terminal);
                continue;
            }
            if k > 0 {
                state = self.env.transition(level - 1, state, continuation[k - 1]);
                steps += 1;
            }
            let mut rng = stream.at_step(level as u64);
            out.push(self.env.sample_emission(level, state, &mut rng));
            emitted += 1;
        }
        self.ledger.charge(steps, emitted, 0);
        Ok(out)
    }

    fn future_charge(&self, level: usize, depth: usize) -> (u64, u64) {
        let emitted = depth
            .min(self.env.emission_levels().saturating_sub(level))
            .min((self.env.transition_levels() + 1).saturating_sub(level));
        ((level + emitted.saturating_sub(1)) as u64, emitted as u64)
    }

    fn ledger(&self) -> LedgerSnapshot {
        self.ledger.snapshot()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    /// Two-state XOR chain: `p(s, a) = s ^ a`, observation = state, reward = 0.7.
    pub(crate) struct XorChain {
        pub horizon: usize,
    }

    impl Pomdp for XorChain {
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn action_count(&self) -> usize {
            2
        }
        fn state_count(&self) -> usize {
            2
        }
        fn transition(&self, _level: usize, state: usize, action: usize) -> usize {
            state ^ action
        }
        fn sample_emission(&self, _: usize, state: usize, _: &mut dyn RngCore) -> Observation {
            Observation::Symbol(state)
        }
        fn sample_reward(&self, _: usize, _: usize, _: usize, _: &mut dyn RngCore) -> f64 {
            0.7
        }
        fn feature_dim(&self) -> usize {
            2
        }
        fn write_feature(&self, obs: &Observation, out: &mut [f64]) -> bool {
            out.fill(0.0);
            if let Observation::Symbol(o) = obs {
                out[*o] = 1.0;
            }
            false
        }
        fn tuple_feature_dim(&self, depth: usize) -> usize {
            2usize.pow(depth as u32)
        }
        fn write_tuple_feature(&self, obs: &[Observation], out: &mut [f64]) -> bool {
            out.fill(0.0);
            let idx = obs.iter().fold(0, |acc, o| match o {
                Observation::Symbol(s) => acc * 2 + s,
                _ => acc * 2,
            });
            out[idx] = 1.0;
            false
        }
    }

    #[test]
    fn reach_empty_sequence_is_initial_state() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 1);
        let s = sim.reach(&ActionSequence::empty()).unwrap();
        assert_eq!(s.index, 0);
        assert_eq!(sim.ledger().episodes, 1);
        assert_eq!(sim.ledger().steps, 0);
    }

    #[test]
    fn reach_xor_chain() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 1);
        let seq = ActionSequence::from(vec![1, 1]);
        assert_eq!(sim.reach(&seq).unwrap().index, 0);
        assert_eq!(sim.reach(&seq).unwrap(), sim.reach(&seq).unwrap());
        assert_eq!(
            sim.reach(&ActionSequence::from(vec![1, 0])).unwrap().index,
            1
        );
        let snap = sim.ledger();
        assert_eq!(snap.episodes, 4);
        assert_eq!(snap.steps, 8);
    }

    #[test]
    fn reach_rejects_long_sequences_and_bad_actions() {
        let env = XorChain { horizon: 2 };
        let sim = Simulator::new(&env, 1);
        assert_eq!(
            sim.reach(&ActionSequence::from(vec![0, 0, 0])),
            Err(Error::SequenceTooLong { len: 3, horizon: 2 })
        );
        assert_eq!(
            sim.reach(&ActionSequence::from(vec![2])),
            Err(Error::InvalidAction {
                action: 2,
                count: 2
            })
        );
        assert_eq!(sim.ledger().episodes, 0);
    }

    #[test]
    fn deterministic_emission_and_reward() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 9);
        let seq = ActionSequence::from(vec![1]);
        let obs = sim.sample_observation(&seq, &sim.fresh_stream()).unwrap();
        assert_eq!(obs, Observation::Symbol(1));
        let r = sim.sample_reward(&seq, 0, &sim.fresh_stream()).unwrap();
        assert_eq!(r, 0.7);
        let snap = sim.ledger();
        assert_eq!(snap.obs_samples, 1);
        assert_eq!(snap.reward_samples, 1);
        assert_eq!(snap.steps, 1 + 2);
    }

    #[test]
    fn reward_past_horizon_is_an_error() {
        let env = XorChain { horizon: 2 };
        let sim = Simulator::new(&env, 9);
        let seq = ActionSequence::from(vec![1, 0]);
        assert_eq!(
            sim.sample_reward(&seq, 0, &sim.fresh_stream()),
            Err(Error::HorizonExceeded {
                level: 2,
                horizon: 2
            })
        );
    }

    #[test]
    fn future_pads_with_terminal_symbols() {
        let env = XorChain { horizon: 2 };
        let sim = Simulator::new(&env, 9);
        let seq = ActionSequence::from(vec![1]);
        let obs = sim
            .sample_future(&seq, &[1, 0], &sim.fresh_stream())
            .unwrap();
        assert_eq!(
            obs,
            vec![
                Observation::Symbol(1),
                Observation::Terminal,
                Observation::Terminal
            ]
        );
        let snap = sim.ledger();
        assert_eq!((snap.steps, snap.obs_samples), sim.future_charge(1, 3));
        assert_eq!(snap.steps, 1);
    }

    #[test]
    fn streams_are_keyed_by_seed_episode_and_step() {
        let a = RngStream::new(5, 3);
        let b = RngStream::new(5, 3);
        assert_eq!(a.at_step(2).random::<u64>(), b.at_step(2).random::<u64>());
        assert_ne!(a.at_step(2).random::<u64>(), a.at_step(1).random::<u64>());
        assert_ne!(
            a.at_step(2).random::<u64>(),
            RngStream::new(5, 4).at_step(2).random::<u64>()
        );
        assert_ne!(
            a.at_step(2).random::<u64>(),
            RngStream::new(6, 3).at_step(2).random::<u64>()
        );
    }

    #[test]
    fn concurrent_sampling_keeps_ledger_exact() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 2);
        let seq = ActionSequence::from(vec![1, 1]);
        std::thread::scope(|scope| {
            for _ in 0..4 {
                scope.spawn(|| {
                    for _ in 0..250 {
                        sim.sample_observation(&seq, &sim.fresh_stream()).unwrap();
                    }
                });
            }
        });
        let snap = sim.ledger();
        assert_eq!(snap.episodes, 1000);
        assert_eq!(snap.steps, 2000);
        assert_eq!(snap.obs_samples, 1000);
    }
}
