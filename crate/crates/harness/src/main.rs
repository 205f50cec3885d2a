use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eqdp::env::{self, EmissionStyle, RewardNoise};
use eqdp::oracle;
use eqdp_harness::config::{load_experiment, load_sweep, BudgetPolicy, GenerationSpec, Size};
use eqdp_harness::report::{write_run, write_sweep};
use eqdp_harness::{run_experiment, run_sweep, Aggregate, ExitStatus, HarnessError, Result};

/// Exit codes: 0 success, 1 crash, 2 validation or config error,
/// 3 generation infeasible, 4 bad-event budget exhausted in some seed,
/// 5 assumption audit failed.
#[derive(Parser)]
#[command(
    name = "eqdp",
    version,
    about = "Exact open-loop policy learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Tabular,
    Overcomplete,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Bernoulli,
    Deterministic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emission {
    Mixed,
    Dirac,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded environment, write it and print its audit.
    GenerateEnv {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long = "S")]
        states: usize,
        /// Observation count (tabular, overcomplete).
        #[arg(long = "O")]
        observations: Option<usize>,
        #[arg(long = "A")]
        actions: usize,
        #[arg(long = "H")]
        horizon: usize,
        /// Future depth (overcomplete).
        #[arg(long = "K")]
        future_depth: Option<usize>,
        /// Observation dimension (gaussian).
        #[arg(long = "d")]
        obs_dim: Option<usize>,
        #[arg(long)]
        min_sigma: Option<f64>,
        #[arg(long)]
        min_gap: Option<f64>,
        #[arg(long, value_enum)]
        noise: Option<Noise>,
        /// Emission style (tabular).
        #[arg(long, value_enum)]
        emission: Option<Emission>,
        #[arg(long)]
        mean_scale: Option<f64>,
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the structural assumptions of a serialized environment.
    Audit {
        #[arg(long)]
        env: PathBuf,
        /// Future depth of the check; defaults to the environment's own.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Run the learner over the seeds of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides `output_dir` of the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Exit 0 even when some seed exhausts its bad-event budget.
        #[arg(long)]
        warn_on_budget: bool,
    },
    /// Run an experiment over the cross product of a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        warn_on_budget: bool,
    },
}

fn required(v: Option<usize>, flag: &str, kind: &str) -> Result<usize> {
    v.ok_or_else(|| HarnessError::Validation(format!("--{flag} is required for --kind {kind}")))
}

fn spec_from_flags(cmd: &Command) -> Result<GenerationSpec> {
    let Command::GenerateEnv {
        kind,
        states,
        observations,
        actions,
        horizon,
        future_depth,
        obs_dim,
        min_sigma,
        min_gap,
        noise,
        emission,
        mean_scale,
        max_attempts,
        seed,
        ..
    } = *cmd
    else {
        unreachable!()
    };
    let noise = noise.map(|n| match n {
        Noise::Bernoulli => RewardNoise::Bernoulli,
        Noise::Deterministic => RewardNoise::Deterministic,
    });
    let (states, actions, horizon, seed) = (
        Size::Fixed(states),
        Size::Fixed(actions),
        Size::Fixed(horizon),
        Some(seed),
    );
    Ok(match kind {
        Kind::Tabular => GenerationSpec::Tabular {
            states,
            observations: Size::Fixed(required(observations, "O", "tabular")?),
            actions,
            horizon,
            min_sigma,
            min_gap,
            noise,
            emission: emission.map(|e| match e {
                Emission::Mixed => EmissionStyle::Mixed,
                Emission::Dirac => EmissionStyle::Dirac,
            }),
            max_attempts,
            seed,
        },
        Kind::Overcomplete => GenerationSpec::Overcomplete {
            states,
            observations: Size::Fixed(required(observations, "O", "overcomplete")?),
            actions,
            horizon,
            future_depth: required(future_depth, "K", "overcomplete")?,
            min_sigma,
            min_gap,
            noise,
            max_attempts,
            seed,
        },
        Kind::Gaussian => GenerationSpec::Gaussian {
            states,
            obs_dim: Size::Fixed(required(obs_dim, "d", "gaussian")?),
            actions,
            horizon,
            min_sigma,
            min_gap,
            noise,
            mean_scale,
            max_attempts,
            seed,
        },
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn audit_status(env: &env::Environment, depth: usize) -> ExitStatus {
    let report = oracle::audit(env, depth);
    println!("{}", report.summary());
    if report.passed() {
        ExitStatus::Success
    } else {
        ExitStatus::AuditFailed
    }
}

fn output_dir(
    flag: Option<PathBuf>,
    config: Option<&PathBuf>,
    config_path: &Path,
) -> Result<PathBuf> {
    match (flag, config) {
        (Some(dir), _) => Ok(dir),
        (None, Some(dir)) if dir.is_relative() => {
            Ok(config_path.parent().unwrap_or(Path::new("")).join(dir))
        }
        (None, Some(dir)) => Ok(dir.clone()),
        (None, None) => Err(HarnessError::Validation(
            "no output directory: set output_dir in the config or pass --out-dir".into(),
        )),
    }
}

fn describe(label: &str, a: &Aggregate) {
    let steps = a
        .steps
        .map(|q| q.median.to_string())
        .unwrap_or_else(|| "-".into());
    println!(
        "{label}: {}/{} exact ({}), suboptimal {}, budget exhausted {}, errors {}, median steps {steps}",
        a.successes, a.seeds, a.success_rate, a.suboptimal, a.budget_exhausted, a.errors
    );
}

fn policy(warn: bool, configured: BudgetPolicy) -> BudgetPolicy {
    if warn {
        BudgetPolicy::Warn
    } else {
        configured
    }
}

fn execute(cmd: Command) -> Result<ExitStatus> {
    match cmd {
        Command::GenerateEnv { .. } => {
            let spec = spec_from_flags(&cmd)?;
            let Command::GenerateEnv { seed, out, .. } = &cmd else {
                unreachable!()
            };
            let env = spec.generate(*seed)?;
            write_file(out, &env::serialize(&env))?;
            println!("wrote {}", out.display());
            Ok(audit_status(&env, env.future_depth()))
        }
        Command::Audit { env: path, depth } => {
            let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            let env = env::deserialize(&text)?;
            Ok(audit_status(
                &env,
                depth.unwrap_or_else(|| env.future_depth()),
            ))
        }
        Command::Run {
            config,
            jobs,
            out_dir,
            warn_on_budget,
        } => {
            let cfg = load_experiment(&config)?;
            let dir = output_dir(out_dir, cfg.output_dir.as_ref(), &config)?;
            let report = run_experiment(&cfg, jobs)?;
            for path in write_run(&report, &dir, &cfg.formats)? {
                println!("wrote {}", path.display());
            }
            describe("run", &report.aggregate);
            for s in report.seeds.iter().filter(|s| s.error.is_some()) {
                eprintln!(
                    "seed {}: {}",
                    s.seed,
                    s.error.as_deref().unwrap_or_default()
                );
            }
            Ok(report.exit_status(policy(warn_on_budget, cfg.on_budget_exhausted)))
        }
        Command::Sweep {
            config,
            jobs,
            out_dir,
            warn_on_budget,
        } => {
            let (sweep, base) = load_sweep(&config)?;
            let dir = output_dir(out_dir, sweep.output_dir.as_ref(), &config)?;
            let report = run_sweep(&sweep, &base, jobs)?;
            for path in write_sweep(&report, &dir)? {
                println!("wrote {}", path.display());
            }
            for p in &report.points {
                describe(&format!("point {}", p.index), &p.aggregate);
            }
            let configured = report
                .points
                .iter()
                .map(|p| p.config.on_budget_exhausted)
                .max_by_key(|p| *p == BudgetPolicy::Fail)
                .unwrap_or_default();
            Ok(report.exit_status(policy(warn_on_budget, configured)))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match execute(cli.command) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            e.status()
        }
    };
    match status {
        ExitStatus::BudgetExhausted => {
            eprintln!("error: bad-event budget exhausted in at least one seed")
        }
        ExitStatus::AuditFailed => eprintln!("error: assumption audit failed"),
        _ => {}
    }
    ExitCode::from(status.code() as u8)
}
