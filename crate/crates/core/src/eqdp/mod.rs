//! The learner: greedy rollouts with elliptical uncertainty checks (main loop)
//! and the recursive value estimator Compute-V*.
//!
//! Every rollout re-estimates each feature from fresh samples. Whenever some
//! level of the rollout is not covered by the data (`norm > eps`), the smallest
//! such level is expanded: every action gets a label
//! `r_hat + Compute-V*(h + 1)` and the feature joins that level's datasets.
//! When all `H` levels are covered the greedy sequence is returned.

mod params;
mod run;

pub use params::{
    auto_parameters, AutoParameters, EqdpConfig, Mode, Multipliers, DEFAULT_MAX_BAD_EVENTS,
};
pub use run::{run, Eqdp, EqdpRun, EventKind, EventOrigin, EventRecord, LevelState, Outcome};
