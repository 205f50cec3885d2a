//! Experiment harness for the `eqdp` learner: JSON experiment and sweep
//! configs, seeded parallel execution and report emission.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::{
    AlgorithmSpec, AutoRequest, EnvironmentSource, ExperimentConfig, GenerationSpec, Size,
    SweepConfig,
};
pub use error::{ExitStatus, HarnessError, Result};
pub use experiment::{
    run_experiment, run_sweep, Aggregate, RunReport, SeedReport, SeedStatus, SweepReport,
};
