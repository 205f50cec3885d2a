//! Per-seed execution, aggregation and sweep expansion.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use eqdp::env::{self, Environment};
use eqdp::eqdp::{auto_parameters, run, AutoParameters, EqdpConfig, EqdpRun, Outcome};
use eqdp::estimation::stacked_feature_dim;
use eqdp::oracle::{self, OracleSolution};
use eqdp::{LedgerSnapshot, Pomdp, SampleAccess, Simulator};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{
    AlgorithmSpec, BudgetPolicy, EnvironmentSource, ExperimentConfig, SweepConfig,
};
use crate::error::{ExitStatus, HarnessError, Result};

pub const REPORT_SCHEMA_VERSION: u64 = 1;

/// XORed into the run seed so the learner never shares a ChaCha key with the
/// environment generator.
const LEARNER_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn learner_seed(seed: u64) -> u64 {
    seed ^ LEARNER_SALT
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Success,
    /// Terminated with a sequence other than the oracle's.
    Suboptimal,
    BudgetExhausted,
    Error,
}

/// Outcome of one seed. `success` means an exact match with the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub status: SeedStatus,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_seed: Option<u64>,
    pub returned: Option<Vec<usize>>,
    pub optimal: Option<Vec<usize>>,
    pub ledger: LedgerSnapshot,
    /// Ledger totals equal the event-log reconstruction.
    pub ledger_reconstructed: bool,
    pub bad_events_per_level: Vec<usize>,
    pub bad_events_total: usize,
    /// Levels whose bad-event count breaks the potential bound.
    pub potential_violations: Vec<usize>,
    pub iterations: usize,
    pub max_recursion_depth: usize,
    pub base_case_calls: usize,
    pub feature_dim: usize,
    pub audit_passed: bool,
    pub gap: Option<f64>,
    pub theta: Option<f64>,
    pub config: Option<EqdpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto: Option<AutoParameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<i32>,
    pub wall_ms: u64,
}

impl SeedReport {
    fn failed(seed: u64, env_seed: Option<u64>, err: &HarnessError) -> Self {
        SeedReport {
            seed,
            status: SeedStatus::Error,
            success: false,
            env_seed,
            returned: None,
            optimal: None,
            ledger: LedgerSnapshot::default(),
            ledger_reconstructed: true,
            bad_events_per_level: Vec::new(),
            bad_events_total: 0,
            potential_violations: Vec::new(),
            iterations: 0,
            max_recursion_depth: 0,
            base_case_calls: 0,
            feature_dim: 0,
            audit_passed: false,
            gap: None,
            theta: None,
            config: None,
            auto: None,
            error: Some(err.to_string()),
            error_code: Some(err.status().code()),
            wall_ms: 0,
        }
    }

    pub fn completed(&self) -> bool {
        self.status != SeedStatus::Error
    }
}

/// Order statistics of a counter over completed seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    /// Nearest-rank percentiles.
    pub p10: u64,
    pub p90: u64,
    pub max: u64,
}

impl Quantiles {
    pub fn of(values: &[u64]) -> Option<Quantiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        let n = v.len();
        let rank = |p: f64| v[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(Quantiles {
            median: 0.5 * (v[(n - 1) / 2] as f64 + v[n / 2] as f64),
            p10: rank(0.1),
            p90: rank(0.9),
            max: v[n - 1],
        })
    }
}

/// Seed-order-independent summary; wall times are deliberately absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub suboptimal: usize,
    pub budget_exhausted: usize,
    pub errors: usize,
    pub audit_failures: usize,
    pub potential_violations: usize,
    pub ledger_consistent: bool,
    pub episodes: Option<Quantiles>,
    pub steps: Option<Quantiles>,
    pub obs_samples: Option<Quantiles>,
    pub reward_samples: Option<Quantiles>,
    pub bad_events: Option<Quantiles>,
}

impl Aggregate {
    pub fn of(seeds: &[SeedReport]) -> Aggregate {
        let done: Vec<&SeedReport> = seeds.iter().filter(|s| s.completed()).collect();
        let count = |st: SeedStatus| seeds.iter().filter(|s| s.status == st).count();
        let pick = |f: fn(&SeedReport) -> u64| {
            Quantiles::of(&done.iter().map(|s| f(s)).collect::<Vec<_>>())
        };
        let successes = seeds.iter().filter(|s| s.success).count();
        Aggregate {
            seeds: seeds.len(),
            successes,
            success_rate: successes as f64 / seeds.len() as f64,
            suboptimal: count(SeedStatus::Suboptimal),
            budget_exhausted: count(SeedStatus::BudgetExhausted),
            errors: count(SeedStatus::Error),
            audit_failures: done.iter().filter(|s| !s.audit_passed).count(),
            potential_violations: seeds.iter().map(|s| s.potential_violations.len()).sum(),
            ledger_consistent: seeds.iter().all(|s| s.ledger_reconstructed),
            episodes: pick(|s| s.ledger.episodes),
            steps: pick(|s| s.ledger.steps),
            obs_samples: pick(|s| s.ledger.obs_samples),
            reward_samples: pick(|s| s.ledger.reward_samples),
            bad_events: pick(|s| s.bad_events_total as u64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u64,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn exit_status(&self, policy: BudgetPolicy) -> ExitStatus {
        exit_status(&self.seeds, policy)
    }
}

/// Most severe status over `seeds`: crash, validation, generation, audit,
/// budget, in that order.
pub fn exit_status<'a>(
    seeds: impl IntoIterator<Item = &'a SeedReport>,
    policy: BudgetPolicy,
) -> ExitStatus {
    let seeds: Vec<&SeedReport> = seeds.into_iter().collect();
    let codes: Vec<i32> = seeds.iter().filter_map(|s| s.error_code).collect();
    for status in [
        ExitStatus::Failure,
        ExitStatus::Validation,
        ExitStatus::GenerationInfeasible,
    ] {
        if codes.contains(&status.code()) {
            return status;
        }
    }
    if seeds.iter().any(|s| s.completed() && !s.audit_passed) {
        return ExitStatus::AuditFailed;
    }
    if policy == BudgetPolicy::Fail
        && seeds
            .iter()
            .any(|s| s.status == SeedStatus::BudgetExhausted)
    {
        return ExitStatus::BudgetExhausted;
    }
    ExitStatus::Success
}

/// Environment shared by every seed (file source), if any.
fn shared_environment(cfg: &ExperimentConfig) -> Result<Option<Environment>> {
    match &cfg.environment {
        EnvironmentSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            Ok(Some(env::deserialize(&text)?))
        }
        EnvironmentSource::Generate(_) => Ok(None),
    }
}

/// Learner configuration for `env`; auto requests read `Delta` and `Theta`
/// off the oracle solution at depth `K`.
pub fn resolve_config(
    algorithm: &AlgorithmSpec,
    env: &Environment,
    solution: &OracleSolution,
    feature_dim: usize,
) -> Result<(EqdpConfig, Option<AutoParameters>)> {
    match algorithm {
        AlgorithmSpec::Explicit(cfg) => Ok((cfg.clone(), None)),
        AlgorithmSpec::Auto(req) => {
            let gap = solution.gap.ok_or_else(|| {
                HarnessError::Validation("environment has no strictly positive gap".into())
            })?;
            let p = auto_parameters(
                gap,
                solution.theta_bound,
                feature_dim,
                env.horizon(),
                env.action_count(),
                req.delta,
                req.multipliers.multipliers(),
            )?;
            let mut cfg = EqdpConfig::from_auto(&p).with_future_depth(solution.future_depth);
            if let Some(lambda) = req.lambda {
                cfg = cfg.with_lambda(lambda);
            }
            if let Some(mode) = req.mode {
                cfg = cfg.with_mode(mode);
            }
            if let Some(cap) = req.max_bad_events {
                cfg = cfg.with_max_bad_events(cap);
            }
            cfg.validate()?;
            Ok((cfg, Some(p)))
        }
    }
}

fn future_depth(algorithm: &AlgorithmSpec, env: &Environment) -> usize {
    match algorithm {
        AlgorithmSpec::Explicit(cfg) => cfg.future_depth,
        AlgorithmSpec::Auto(req) => req.future_depth.unwrap_or_else(|| env.future_depth()),
    }
}

fn execute(
    cfg: &ExperimentConfig,
    env: &Environment,
    seed: u64,
    env_seed: Option<u64>,
) -> Result<SeedReport> {
    let depth = future_depth(&cfg.algorithm, env);
    let solution = oracle::solve(env, depth);
    let sim = Simulator::new(env, learner_seed(seed));
    let dim = stacked_feature_dim(&sim, depth);
    let (config, auto) = resolve_config(&cfg.algorithm, env, &solution, dim)?;
    let start = Instant::now();
    let out: EqdpRun = run(&sim, &config)?;
    let wall_ms = start.elapsed().as_millis() as u64;
    let returned = out.actions().map(|a| a.as_slice().to_vec());
    let optimal = solution.optimal_actions.as_slice().to_vec();
    let success = returned.as_deref() == Some(optimal.as_slice());
    let status = match (&out.outcome, success) {
        (Outcome::BudgetExhausted { .. }, _) => SeedStatus::BudgetExhausted,
        (_, true) => SeedStatus::Success,
        _ => SeedStatus::Suboptimal,
    };
    Ok(SeedReport {
        seed,
        status,
        success,
        env_seed,
        returned,
        optimal: Some(optimal),
        ledger_reconstructed: out.reconstruct_ledger() == out.ledger && out.ledger == sim.ledger(),
        ledger: out.ledger,
        bad_events_per_level: out.bad_events_per_level(),
        bad_events_total: out.total_bad_events(),
        potential_violations: out.potential_violations(),
        iterations: out.iterations,
        max_recursion_depth: out.max_recursion_depth,
        base_case_calls: out.base_case_calls,
        feature_dim: out.feature_dim,
        audit_passed: solution.audit.passed(),
        gap: solution.gap,
        theta: Some(solution.theta_bound),
        config: Some(config),
        auto,
        error: None,
        error_code: None,
        wall_ms,
    })
}

/// Runs one seed. Failures become `Error` rows instead of aborting the batch.
pub fn run_seed(cfg: &ExperimentConfig, shared: Option<&Environment>, seed: u64) -> SeedReport {
    let (env, env_seed) = match (shared, &cfg.environment) {
        (Some(env), _) => (Ok(env.clone()), None),
        (None, EnvironmentSource::Generate(spec)) => {
            (spec.generate(seed), Some(spec.env_seed(seed)))
        }
        (None, EnvironmentSource::File(p)) => {
            let err =
                HarnessError::Validation(format!("environment {} was not loaded", p.display()));
            return SeedReport::failed(seed, None, &err);
        }
    };
    match env.and_then(|env| execute(cfg, &env, seed, env_seed)) {
        Ok(report) => report,
        Err(err) => SeedReport::failed(seed, env_seed, &err),
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Validation(format!("thread pool: {e}")))
}

/// Runs every seed on up to `jobs` threads; rows come back in seed-list order.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<RunReport> {
    let shared = shared_environment(cfg)?;
    let seeds = cfg.seeds.to_vec();
    let rows: Vec<SeedReport> = pool(jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(cfg, shared.as_ref(), s))
            .collect()
    });
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        aggregate: Aggregate::of(&rows),
        seeds: rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub values: BTreeMap<String, Value>,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u64,
    pub grid: BTreeMap<String, Vec<Value>>,
    pub points: Vec<PointReport>,
}

impl SweepReport {
    pub fn exit_status(&self, policy: BudgetPolicy) -> ExitStatus {
        exit_status(self.points.iter().flat_map(|p| &p.seeds), policy)
    }
}

/// Cross product of the grid in key order, last key varying fastest.
pub fn grid_points(grid: &BTreeMap<String, Vec<Value>>) -> Vec<BTreeMap<String, Value>> {
    let mut points = vec![BTreeMap::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

/// The experiment of one grid point.
pub fn point_config(
    sweep: &SweepConfig,
    values: &BTreeMap<String, Value>,
    base: &Path,
) -> Result<ExperimentConfig> {
    let mut doc = sweep.experiment.clone();
    for (pointer, v) in values {
        let slot = doc.pointer_mut(pointer).ok_or_else(|| {
            HarnessError::Validation(format!(
                "grid key {pointer} does not name a field of the experiment"
            ))
        })?;
        *slot = v.clone();
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(doc)
        .map_err(|e| HarnessError::Validation(format!("grid point {values:?}: {e}")))?;
    cfg.validate(base)?;
    Ok(cfg)
}

/// Every (grid point, seed) pair runs as an independent task.
pub fn run_sweep(sweep: &SweepConfig, base: &Path, jobs: usize) -> Result<SweepReport> {
    if sweep.grid.values().any(Vec::is_empty) {
        return Err(HarnessError::Validation(
            "grid values must be non-empty".into(),
        ));
    }
    let values = grid_points(&sweep.grid);
    let configs = values
        .iter()
        .map(|v| point_config(sweep, v, base))
        .collect::<Result<Vec<_>>>()?;
    let shared = configs
        .iter()
        .map(shared_environment)
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds.to_vec().into_iter().map(move |s| (i, s)))
        .collect();
    let rows: Vec<SeedReport> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, s)| run_seed(&configs[i], shared[i].as_ref(), s))
            .collect()
    });
    let mut rows = rows.into_iter();
    let points = configs
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(index, (config, values))| {
            let seeds: Vec<SeedReport> = rows.by_ref().take(config.seeds.to_vec().len()).collect();
            PointReport {
                index,
                values,
                aggregate: Aggregate::of(&seeds),
                config,
                seeds,
            }
        })
        .collect();
    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        grid: sweep.grid.clone(),
        points,
    })
}
