use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::params::{EqdpConfig, Mode};
use crate::error::{Error, Result};
use crate::estimation::{
    collect_batch, estimate_multistep_feature, estimate_reward, feature_charge, reward_charge,
    stacked_feature_dim,
};
use crate::pomdp::{ActionSequence, LedgerSnapshot, SampleAccess};
use crate::regression::{argmax, potential_slack, KernelQuery, KernelState, RidgeState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Good,
    Bad,
    Terminate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOrigin {
    MainLoop,
    ComputeV,
}

/// One uncertainty check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub iteration: usize,
    pub level: usize,
    pub kind: EventKind,
    pub origin: EventOrigin,
    /// `||x_hat||_{Sigma^-1}` (primal) or `sigma / sqrt(lambda)` (kernel). For a
    /// terminate record, the largest norm of the final rollout.
    pub norm: f64,
    /// Whether this check added a point to its level's datasets.
    pub dataset_update: bool,
    pub ledger: LedgerSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Success { actions: ActionSequence },
    BudgetExhausted { limit: usize },
}

/// Regression state of one level.
#[derive(Clone, Debug)]
pub enum LevelState {
    Primal(RidgeState),
    Kernel(KernelState),
}

impl LevelState {
    pub fn len(&self) -> usize {
        match self {
            LevelState::Primal(s) => s.len(),
            LevelState::Kernel(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label_counts(&self) -> Vec<usize> {
        match self {
            LevelState::Primal(s) => (0..s.action_count()).map(|a| s.labels(a).len()).collect(),
            LevelState::Kernel(s) => (0..s.action_count()).map(|a| s.labels(a).len()).collect(),
        }
    }

    pub fn log_det_gain(&self) -> f64 {
        match self {
            LevelState::Primal(s) => s.log_det_gain(),
            LevelState::Kernel(s) => s.log_det_gain(),
        }
    }

    pub fn as_primal(&self) -> Option<&RidgeState> {
        match self {
            LevelState::Primal(s) => Some(s),
            LevelState::Kernel(_) => None,
        }
    }
}

/// A feature estimate in the representation the level state consumes.
enum Estimate {
    Primal(DVector<f64>),
    Kernel(KernelQuery),
}

/// Finished run.
#[derive(Clone, Debug)]
pub struct EqdpRun {
    pub config: EqdpConfig,
    pub outcome: Outcome,
    pub events: Vec<EventRecord>,
    pub levels: Vec<LevelState>,
    pub iterations: usize,
    pub max_recursion_depth: usize,
    /// Number of `h = H - 1` base-case evaluations inside Compute-V*.
    pub base_case_calls: usize,
    /// Dimension of the learned feature (`d A^{K-1}` for `K`-step features).
    pub feature_dim: usize,
    /// Ledger usage of this run.
    pub ledger: LedgerSnapshot,
    feature_costs: Vec<LedgerSnapshot>,
    reward_costs: Vec<LedgerSnapshot>,
}

fn add(a: &mut LedgerSnapshot, b: &LedgerSnapshot, times: u64) {
    a.episodes += b.episodes * times;
    a.steps += b.steps * times;
    a.obs_samples += b.obs_samples * times;
    a.reward_samples += b.reward_samples * times;
}

impl EqdpRun {
    pub fn actions(&self) -> Option<&ActionSequence> {
        match &self.outcome {
            Outcome::Success { actions } => Some(actions),
            Outcome::BudgetExhausted { .. } => None,
        }
    }

    pub fn succeeded(&self) -> bool {
        matches!(self.outcome, Outcome::Success { .. })
    }

    pub fn horizon(&self) -> usize {
        self.levels.len()
    }

    /// Dataset updates per level (`|D_h|`).
    pub fn bad_events_per_level(&self) -> Vec<usize> {
        self.levels.iter().map(LevelState::len).collect()
    }

    pub fn total_bad_events(&self) -> usize {
        self.bad_events_per_level().iter().sum()
    }

    /// `|D_h| = |D_{a;h}|` for every action and level.
    pub fn datasets_aligned(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.label_counts().iter().all(|&n| n == l.len()))
    }

    /// Levels whose bad-event count breaks `eps N <= sqrt(N d ln(1 + N/d))`.
    pub fn potential_violations(&self) -> Vec<usize> {
        self.bad_events_per_level()
            .iter()
            .enumerate()
            .filter(|(_, &n)| potential_slack(self.config.epsilon, n, self.feature_dim) < 0.0)
            .map(|(h, _)| h)
            .collect()
    }

    /// Ledger usage implied by the event log: one feature estimate per record,
    /// reward estimates per branch, and `A` rewards per base case.
    pub fn reconstruct_ledger(&self) -> LedgerSnapshot {
        let actions = self.levels.first().map_or(0, |l| l.label_counts().len()) as u64;
        let mut total = LedgerSnapshot::default();
        for e in &self.events {
            if e.kind == EventKind::Terminate {
                continue;
            }
            add(&mut total, &self.feature_costs[e.level], 1);
            let rewards = match (e.origin, e.kind, e.dataset_update) {
                (EventOrigin::MainLoop, _, true) => actions,
                (EventOrigin::MainLoop, _, false) => 0,
                (EventOrigin::ComputeV, EventKind::Good, _) => 1,
                (EventOrigin::ComputeV, _, _) => actions,
            };
            add(&mut total, &self.reward_costs[e.level], rewards);
        }
        if let Some(last) = self.reward_costs.last() {
            add(&mut total, last, self.base_case_calls as u64 * actions);
        }
        total
    }
}

/// Algorithm state while running. Exposed so that tests can pre-fill the
/// level datasets and call [`Eqdp::compute_v_star`] directly.
pub struct Eqdp<'a, S: SampleAccess + ?Sized> {
    access: &'a S,
    config: EqdpConfig,
    levels: Vec<LevelState>,
    events: Vec<EventRecord>,
    iteration: usize,
    depth: usize,
    max_depth: usize,
    base_case_calls: usize,
    feature_dim: usize,
    start: LedgerSnapshot,
}

impl<'a, S: SampleAccess + ?Sized> Eqdp<'a, S> {
    pub fn new(access: &'a S, config: EqdpConfig) -> Result<Self> {
        config.validate()?;
        let (horizon, actions) = (access.horizon(), access.action_count());
        let feature_dim = stacked_feature_dim(access, config.future_depth);
        let levels = (0..horizon)
            .map(|_| match config.mode {
                Mode::Primal => {
                    RidgeState::new(feature_dim, actions, config.lambda).map(LevelState::Primal)
                }
                Mode::Kernel { kernel } => {
                    KernelState::new(kernel, actions, config.lambda).map(LevelState::Kernel)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Eqdp {
            access,
            config,
            levels,
            events: Vec::new(),
            iteration: 0,
            depth: 0,
            max_depth: 0,
            base_case_calls: 0,
            feature_dim,
            start: access.ledger(),
        })
    }

    pub fn level(&self, h: usize) -> &LevelState {
        &self.levels[h]
    }

    pub fn level_mut(&mut self, h: usize) -> &mut LevelState {
        &mut self.levels[h]
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn estimate(&self, seq: &ActionSequence) -> Result<Estimate> {
        let h = seq.level();
        match &self.levels[h] {
            LevelState::Primal(_) => estimate_multistep_feature(
                self.access,
                seq,
                self.config.future_depth,
                self.config.m,
            )
            .map(|x| Estimate::Primal(x.vector)),
            LevelState::Kernel(state) => {
                let batch = collect_batch(self.access, seq, self.config.m)?;
                state.query(&batch.samples).map(Estimate::Kernel)
            }
        }
    }

    fn uncertainty(&self, h: usize, x: &Estimate) -> Result<f64> {
        match (&self.levels[h], x) {
            (LevelState::Primal(s), Estimate::Primal(v)) => s.elliptical_norm(v),
            (LevelState::Kernel(s), Estimate::Kernel(q)) => {
                Ok(s.kernel_sigma(q)? / self.config.lambda.sqrt())
            }
            _ => unreachable!("estimate matches the level representation"),
        }
    }

    fn greedy(&self, h: usize, x: &Estimate) -> Result<usize> {
        let values = match (&self.levels[h], x) {
            (LevelState::Primal(s), Estimate::Primal(v)) => s.predict_all(v)?,
            (LevelState::Kernel(s), Estimate::Kernel(q)) => s.kernel_predict_all(q),
            _ => unreachable!("estimate matches the level representation"),
        };
        Ok(argmax(&values))
    }

    fn store(&mut self, h: usize, x: Estimate, labels: &[f64]) -> Result<()> {
        match (&mut self.levels[h], x) {
            (LevelState::Primal(s), Estimate::Primal(v)) => s.add_point(v, labels),
            (LevelState::Kernel(s), Estimate::Kernel(q)) => s.add_batch(q, labels),
            _ => unreachable!("estimate matches the level representation"),
        }
    }

    fn record(
        &mut self,
        level: usize,
        kind: EventKind,
        origin: EventOrigin,
        norm: f64,
        dataset_update: bool,
    ) {
        self.events.push(EventRecord {
            iteration: self.iteration,
            level,
            kind,
            origin,
            norm,
            dataset_update,
            ledger: self.access.ledger().delta(&self.start),
        });
    }

    fn reward(&self, seq: &ActionSequence, action: usize) -> Result<f64> {
        estimate_reward(self.access, seq, action, self.config.m_prime)
    }

    /// Label `r_hat(seq, a) + V_hat(h + 1, seq + a)` with `V_hat(H, .) = 0`.
    fn label(&mut self, seq: &ActionSequence, action: usize) -> Result<f64> {
        let r = self.reward(seq, action)?;
        if seq.level() + 1 == self.access.horizon() {
            Ok(r)
        } else {
            Ok(r + self.compute_v_star(seq.level() + 1, &seq.extended(action))?)
        }
    }

    /// Monte-Carlo estimate of `V*_h` at the state reached by `seq`.
    ///
    /// At the last level this is the best estimated reward. Otherwise the
    /// feature is estimated: if it is well covered, the greedy action is taken
    /// and the estimate recurses one level down; if not, every action is
    /// expanded, the level datasets receive the feature with all `A` labels
    /// and the best label is returned.
    pub fn compute_v_star(&mut self, h: usize, seq: &ActionSequence) -> Result<f64> {
        let horizon = self.access.horizon();
        if h >= horizon || seq.level() != h {
            return Err(Error::HorizonExceeded { level: h, horizon });
        }
        self.depth += 1;
        self.max_depth = self.max_depth.max(self.depth);
        assert!(
            self.depth <= horizon,
            "Compute-V* recursion deeper than the horizon"
        );
        let value = self.compute_v_inner(h, seq);
        self.depth -= 1;
        value
    }

    fn compute_v_inner(&mut self, h: usize, seq: &ActionSequence) -> Result<f64> {
        let actions = self.access.action_count();
        if h + 1 == self.access.horizon() {
            self.base_case_calls += 1;
            let mut best = f64::NEG_INFINITY;
            for a in 0..actions {
                best = best.max(self.reward(seq, a)?);
            }
            return Ok(best);
        }
        let x = self.estimate(seq)?;
        let norm = self.uncertainty(h, &x)?;
        if norm <= self.config.epsilon {
            self.record(h, EventKind::Good, EventOrigin::ComputeV, norm, false);
            let a = self.greedy(h, &x)?;
            return self.label(seq, a);
        }
        self.record(h, EventKind::Bad, EventOrigin::ComputeV, norm, true);
        let mut labels = Vec::with_capacity(actions);
        for a in 0..actions {
            labels.push(self.label(seq, a)?);
        }
        let best = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.store(h, x, &labels)?;
        Ok(best)
    }

    /// One main-loop iteration: greedy rollout, then either termination or a
    /// dataset update at the smallest uncovered level.
    fn iterate(&mut self) -> Result<Option<ActionSequence>> {
        self.iteration += 1;
        let horizon = self.access.horizon();
        let mut seq = ActionSequence::empty();
        let mut first_bad: Option<(usize, Estimate, ActionSequence)> = None;
        let mut max_norm: f64 = 0.0;
        for h in 0..horizon {
            let x = self.estimate(&seq)?;
            let norm = self.uncertainty(h, &x)?;
            max_norm = max_norm.max(norm);
            let a = self.greedy(h, &x)?;
            let bad = norm > self.config.epsilon;
            let acted = bad && first_bad.is_none();
            let kind = if bad { EventKind::Bad } else { EventKind::Good };
            self.record(h, kind, EventOrigin::MainLoop, norm, acted);
            if acted {
                first_bad = Some((h, x, seq.clone()));
            }
            seq = seq.extended(a);
        }
        let Some((h, x, prefix)) = first_bad else {
            self.record(
                horizon,
                EventKind::Terminate,
                EventOrigin::MainLoop,
                max_norm,
                false,
            );
            return Ok(Some(seq));
        };
        let mut labels = Vec::with_capacity(self.access.action_count());
        for a in 0..self.access.action_count() {
            labels.push(self.label(&prefix, a)?);
        }
        self.store(h, x, &labels)?;
        Ok(None)
    }

    /// Runs the main loop to termination or until the bad-event cap trips.
    ///
    /// The cap is checked between iterations, so an iteration in progress
    /// always completes and the event log accounts for every sample drawn.
    pub fn run(mut self) -> Result<EqdpRun> {
        let limit = self.config.max_bad_events;
        let outcome = loop {
            if self.levels.iter().map(LevelState::len).sum::<usize>() >= limit {
                break Outcome::BudgetExhausted { limit };
            }
            if let Some(actions) = self.iterate()? {
                break Outcome::Success { actions };
            }
        };
        let (horizon, k) = (self.access.horizon(), self.config.future_depth);
        let feature_costs = (0..horizon)
            .map(|h| feature_charge(self.access, h, k, self.config.m))
            .collect();
        let reward_costs = (0..horizon)
            .map(|h| reward_charge(h, self.config.m_prime))
            .collect();
        Ok(EqdpRun {
            outcome,
            events: self.events,
            levels: self.levels,
            iterations: self.iteration,
            max_recursion_depth: self.max_depth,
            base_case_calls: self.base_case_calls,
            feature_dim: self.feature_dim,
            ledger: self.access.ledger().delta(&self.start),
            feature_costs,
            reward_costs,
            config: self.config,
        })
    }
}

/// Runs the learner against `access` with `config`.
pub fn run<S: SampleAccess + ?Sized>(access: &S, config: &EqdpConfig) -> Result<EqdpRun> {
    Eqdp::new(access, config.clone())?.run()
}
