//! Ground-truth solver and assumption auditor.
//!
//! Works on environments that expose their ground truth ([`GroundTruth`]); the
//! learner never calls into this module. Values are computed by backward
//! dynamic programming over every latent state at every level, the optimal
//! open-loop sequence is traced forward from `s_0` with lowest-index
//! tie-breaking, and the auditor checks left invertibility, determinism, linear
//! `Q*`, the optimality gap and, for `K > 1`, multi-step full column rank.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::estimation::continuations;
use crate::linalg::{column_sigma_min, numerical_rank, RANK_TOLERANCE};
use crate::pomdp::{ActionSequence, GroundTruth};

/// Value differences at or below this are ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Largest tolerated `||Q* - Phi^T w*||_inf` for the linear-`Q*` check.
pub const LINEARITY_TOLERANCE: f64 = 1e-9;

/// `Q*_h(s, a)` for `h < H` and `V*_h(s)` for `h <= H` (`V*_H = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables {
    pub q: Vec<DMatrix<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl ValueTables {
    pub fn horizon(&self) -> usize {
        self.q.len()
    }

    /// Lowest-index action whose value is within [`TIE_TOLERANCE`] of the best.
    pub fn greedy_action(&self, level: usize, state: usize) -> usize {
        let row = self.q[level].row(state);
        let best = self.v[level][state];
        row.iter()
            .position(|&q| q >= best - TIE_TOLERANCE)
            .expect("V* is attained by some action")
    }

    /// Number of actions tied for the best value at `(level, state)`.
    pub fn optimal_action_count(&self, level: usize, state: usize) -> usize {
        let best = self.v[level][state];
        self.q[level]
            .row(state)
            .iter()
            .filter(|&&q| q >= best - TIE_TOLERANCE)
            .count()
    }
}

pub fn value_iteration<E: GroundTruth + ?Sized>(env: &E) -> ValueTables {
    let (horizon, states, actions) = (env.horizon(), env.state_count(), env.action_count());
    let mut v = vec![DVector::zeros(states); horizon + 1];
    let mut q = vec![DMatrix::zeros(states, actions); horizon];
    for h in (0..horizon).rev() {
        for s in 0..states {
            for a in 0..actions {
                let next = env.transition(h, s, a);
                q[h][(s, a)] = env.reward_mean(h, s, a) + v[h + 1][next];
            }
            v[h][s] = q[h].row(s).max();
        }
    }
    ValueTables { q, v }
}

/// Smallest strictly positive `V*_h(s) - Q*_h(s, a)`; `None` if every gap is a tie.
pub fn optimality_gap(values: &ValueTables) -> Option<f64> {
    let mut gap: Option<f64> = None;
    for (q, v) in values.q.iter().zip(&values.v) {
        for (s, row) in q.row_iter().enumerate() {
            for &qa in row.iter() {
                let g = v[s] - qa;
                if g > TIE_TOLERANCE {
                    gap = Some(gap.map_or(g, |m| m.min(g)));
                }
            }
        }
    }
    gap
}

/// The state visited at every level along `actions` from `s_0`.
pub fn trajectory<E: GroundTruth + ?Sized>(env: &E, actions: &[usize]) -> Vec<usize> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    let mut s = env.initial_state();
    states.push(s);
    for (h, &a) in actions.iter().enumerate() {
        s = env.transition(h, s, a);
        states.push(s);
    }
    states
}

/// Sum of reward means collected by replaying `actions` from `s_0`.
pub fn sequence_value<E: GroundTruth + ?Sized>(env: &E, actions: &[usize]) -> f64 {
    let states = trajectory(env, actions);
    actions
        .iter()
        .enumerate()
        .map(|(h, &a)| env.reward_mean(h, states[h], a))
        .sum()
}

/// Stacked embedding at `level` for `depth`-step futures: one block of rows per
/// continuation in lexicographic order, one column per latent state. For
/// `depth == 1` this is `G_h`.
pub fn stacked_embedding<E: GroundTruth + ?Sized>(
    env: &E,
    level: usize,
    depth: usize,
) -> DMatrix<f64> {
    if depth == 1 {
        return env.expected_feature(level);
    }
    let conts = continuations(env.action_count(), depth - 1);
    let block = env.tuple_feature_dim(depth);
    let mut m = DMatrix::zeros(block * conts.len(), env.state_count());
    for (c, cont) in conts.iter().enumerate() {
        for s in 0..env.state_count() {
            let z = env.expected_tuple_feature(level, s, cont);
            m.view_mut((c * block, s), (block, 1)).copy_from(&z);
        }
    }
    m
}

/// Outcome matrix `P^[K]_h(continuation)`: column `s` is the exact law (or mean
/// feature) of the `K`-observation future.
pub fn outcome_matrix<E: GroundTruth + ?Sized>(
    env: &E,
    level: usize,
    continuation: &[usize],
) -> DMatrix<f64> {
    let depth = continuation.len() + 1;
    let mut m = DMatrix::zeros(env.tuple_feature_dim(depth), env.state_count());
    for s in 0..env.state_count() {
        m.set_column(s, &env.expected_tuple_feature(level, s, continuation));
    }
    m
}

/// `Theta = W / min_h sigma_min(G_h)`.
pub fn theta_bound(weight_norm: f64, min_sigma: f64) -> f64 {
    weight_norm / min_sigma
}

/// Weights `w*_{a;h}` solving `Phi^T w = Q*_h(., a)` in least squares, with the
/// largest norm and the largest residual over all `(a, h)`.
fn linear_weights<E: GroundTruth + ?Sized>(env: &E, values: &ValueTables) -> (f64, f64) {
    let phi = env.state_features();
    let design = phi.transpose();
    let identity = design.nrows() == design.ncols()
        && design == DMatrix::identity(design.nrows(), design.ncols());
    let pinv = if identity {
        None
    } else {
        Some(
            design
                .clone()
                .pseudo_inverse(1e-12)
                .expect("pseudo-inverse of the state feature matrix"),
        )
    };
    let mut w_max: f64 = 0.0;
    let mut residual: f64 = 0.0;
    for q in &values.q {
        for col in q.column_iter() {
            let target = col.into_owned();
            let w = match &pinv {
                None => target.clone(),
                Some(p) => p * &target,
            };
            w_max = w_max.max(w.norm());
            residual = residual.max((&design * &w - &target).amax());
        }
    }
    (w_max, residual)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeftInvertibilityCheck {
    pub sigma_min: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityCheck {
    pub weight_norm: f64,
    pub max_residual: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub delta: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultistepLevel {
    pub level: usize,
    /// First continuation (lexicographic) whose outcome matrix has rank `S`.
    pub witness: Option<Vec<usize>>,
    pub best_rank: usize,
    pub witness_sigma_min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultistepCheck {
    pub depth: usize,
    pub levels: Vec<MultistepLevel>,
    pub passed: bool,
}

/// Pass/fail per assumption with the witnessing quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub left_invertibility: LeftInvertibilityCheck,
    pub deterministic_transitions: bool,
    pub linear_q: LinearityCheck,
    pub gap: GapCheck,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multistep: Option<MultistepCheck>,
    /// `1 / min_h sigma_min(G_h)` (finite-dimensional well-posedness ratio);
    /// diagnostic only, never a pass/fail criterion.
    pub well_posedness_diagnostic: f64,
}

impl AuditReport {
    /// All assumptions needed by the learner hold. With a multi-step check the
    /// `K`-step rank condition replaces one-step left invertibility.
    pub fn passed(&self) -> bool {
        let observable = match &self.multistep {
            Some(m) => m.passed,
            None => self.left_invertibility.passed,
        };
        observable && self.deterministic_transitions && self.linear_q.passed && self.gap.passed
    }

    pub fn summary(&self) -> String {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        let min_sigma = self
            .left_invertibility
            .sigma_min
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let mut lines = vec![
            format!(
                "left invertibility: {} (min sigma_min = {min_sigma})",
                mark(self.left_invertibility.passed)
            ),
            format!(
                "deterministic transitions: {}",
                mark(self.deterministic_transitions)
            ),
            format!(
                "linear Q*: {} (W = {}, residual = {:e})",
                mark(self.linear_q.passed),
                self.linear_q.weight_norm,
                self.linear_q.max_residual
            ),
            format!(
                "optimality gap: {} (delta = {})",
                mark(self.gap.passed),
                self.gap.delta.map_or("none".to_string(), |d| d.to_string())
            ),
        ];
        if let Some(m) = &self.multistep {
            lines.push(format!(
                "{}-step full column rank: {}",
                m.depth,
                mark(m.passed)
            ));
            for l in &m.levels {
                let w = l
                    .witness
                    .as_ref()
                    .map_or("none".to_string(), |w| format!("{:?}", w));
                lines.push(format!(
                    "  level {}: rank {} witness {w}",
                    l.level, l.best_rank
                ));
            }
        }
        lines.push(format!(
            "well-posedness ratio (diagnostic only): {}",
            self.well_posedness_diagnostic
        ));
        lines.push(if self.passed() {
            "all assumptions pass".to_string()
        } else {
            "some assumptions FAIL".to_string()
        });
        lines.join("\n")
    }
}

fn multistep_check<E: GroundTruth + ?Sized>(env: &E, depth: usize) -> MultistepCheck {
    let states = env.state_count();
    let conts = continuations(env.action_count(), depth - 1);
    let levels: Vec<MultistepLevel> = (0..env.horizon())
        .map(|h| {
            let mut best_rank = 0;
            for cont in &conts {
                let m = outcome_matrix(env, h, cont);
                let rank = numerical_rank(&m);
                best_rank = best_rank.max(rank);
                if rank == states {
                    return MultistepLevel {
                        level: h,
                        witness: Some(cont.clone()),
                        best_rank: rank,
                        witness_sigma_min: Some(column_sigma_min(&m)),
                    };
                }
            }
            MultistepLevel {
                level: h,
                witness: None,
                best_rank,
                witness_sigma_min: None,
            }
        })
        .collect();
    let passed = levels.iter().all(|l| l.witness.is_some());
    MultistepCheck {
        depth,
        levels,
        passed,
    }
}

fn audit_with_values<E: GroundTruth + ?Sized>(
    env: &E,
    depth: usize,
    values: &ValueTables,
) -> AuditReport {
    let sigma_min: Vec<f64> = (0..env.horizon())
        .map(|h| column_sigma_min(&env.expected_feature(h)))
        .collect();
    let left_ok = sigma_min.iter().all(|&s| s > RANK_TOLERANCE);

    let mut deterministic = true;
    for h in 0..env.transition_levels() {
        for s in 0..env.state_count() {
            for a in 0..env.action_count() {
                let first = env.transition(h, s, a);
                deterministic &= first == env.transition(h, s, a) && first < env.state_count();
            }
        }
    }

    let (weight_norm, max_residual) = linear_weights(env, values);
    let delta = optimality_gap(values);
    let min_sigma = sigma_min.iter().copied().fold(f64::INFINITY, f64::min);
    AuditReport {
        left_invertibility: LeftInvertibilityCheck {
            sigma_min,
            passed: left_ok,
        },
        deterministic_transitions: deterministic,
        linear_q: LinearityCheck {
            weight_norm,
            max_residual,
            passed: max_residual <= LINEARITY_TOLERANCE,
        },
        gap: GapCheck {
            delta,
            passed: delta.is_some(),
        },
        multistep: (depth > 1).then(|| multistep_check(env, depth)),
        well_posedness_diagnostic: 1.0 / min_sigma,
    }
}

/// Audits the assumptions with the `depth`-step observability check when
/// `depth > 1`.
pub fn audit<E: GroundTruth + ?Sized>(env: &E, depth: usize) -> AuditReport {
    audit_with_values(env, depth, &value_iteration(env))
}

/// Exact solution of a fully specified environment.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub values: ValueTables,
    pub optimal_actions: ActionSequence,
    /// `None` when no strictly positive gap exists.
    pub gap: Option<f64>,
    pub weight_norm: f64,
    /// Smallest singular value of the (stacked) embedding at every level.
    pub sigma_min: Vec<f64>,
    pub theta_bound: f64,
    pub future_depth: usize,
    pub audit: AuditReport,
}

impl OracleSolution {
    pub fn q_star(&self, level: usize, state: usize, action: usize) -> f64 {
        self.values.q[level][(state, action)]
    }

    pub fn v_star(&self, level: usize, state: usize) -> f64 {
        self.values.v[level][state]
    }

    /// `V*_0(s_0)`.
    pub fn optimal_value(&self) -> f64 {
        self.values.v[0][0]
    }

    pub fn min_sigma(&self) -> f64 {
        self.sigma_min.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Solves `env` exactly. `depth` selects the feature used for `Theta`: the
/// one-step embedding (`1`) or the stacked `depth`-step embedding.
pub fn solve<E: GroundTruth + ?Sized>(env: &E, depth: usize) -> OracleSolution {
    assert!(depth >= 1, "future depth must be at least 1");
    let values = value_iteration(env);
    let mut actions = Vec::with_capacity(env.horizon());
    let mut s = env.initial_state();
    for h in 0..env.horizon() {
        let a = values.greedy_action(h, s);
        actions.push(a);
        s = env.transition(h, s, a);
    }
    let audit = audit_with_values(env, depth, &values);
    let sigma_min: Vec<f64> = if depth == 1 {
        audit.left_invertibility.sigma_min.clone()
    } else {
        (0..env.horizon())
            .map(|h| column_sigma_min(&stacked_embedding(env, h, depth)))
            .collect()
    };
    let min_sigma = sigma_min.iter().copied().fold(f64::INFINITY, f64::min);
    let weight_norm = audit.linear_q.weight_norm;
    OracleSolution {
        optimal_actions: ActionSequence::from(actions),
        gap: audit.gap.delta,
        weight_norm,
        theta_bound: theta_bound(weight_norm, min_sigma),
        sigma_min,
        future_depth: depth,
        values,
        audit,
    }
}

/// Whether the optimal action is unique at every state on the optimal path.
pub fn optimal_path_is_unique<E: GroundTruth + ?Sized>(env: &E, solution: &OracleSolution) -> bool {
    let states = trajectory(env, solution.optimal_actions.as_slice());
    (0..env.horizon()).all(|h| solution.values.optimal_action_count(h, states[h]) == 1)
}
