use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::BaseKernel;

/// Constant factors in front of the sample-size and tolerance formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Multipliers {
    pub c_m: f64,
    pub c_m_prime: f64,
    pub c_epsilon: f64,
    /// Upper clamp on `eps`; `None` leaves the formula untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_max: Option<f64>,
}

impl Multipliers {
    /// All constants equal to one.
    pub const UNIT: Multipliers = Multipliers {
        c_m: 1.0,
        c_m_prime: 1.0,
        c_epsilon: 1.0,
        epsilon_max: None,
    };

    /// Calibrated on the desk-scale acceptance environments.
    pub const PRACTICAL: Multipliers = Multipliers {
        c_m: 2e-7,
        c_m_prime: 1e-4,
        c_epsilon: 60.0,
        epsilon_max: Some(0.2),
    };
}

impl Default for Multipliers {
    fn default() -> Self {
        Multipliers::UNIT
    }
}

/// Every quantity produced by [`auto_parameters`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoParameters {
    pub gap: f64,
    pub theta: f64,
    pub dim: usize,
    pub horizon: usize,
    pub actions: usize,
    pub delta: f64,
    pub multipliers: Multipliers,
    /// `c_eps Delta / (6 Theta)` before the optional clamp.
    pub raw_epsilon: f64,
    pub epsilon: f64,
    /// `N' = ceil(H d / eps^2 * ln(e + 1/eps))`.
    pub bad_event_budget: u64,
    /// `delta / (N' (A + 1) H)`.
    pub delta_prime: f64,
    /// `ln(d Theta / Delta + e)`.
    pub log_factor: f64,
    pub m: u64,
    pub m_prime: u64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn ceil_count(v: f64) -> u64 {
    // `as` saturates at u64::MAX for astronomically large theory values
    (v.ceil() as u64).max(1)
}

/// Sample sizes and tolerance from the gap `Delta`, conditioning `Theta`,
/// feature dimension `d` (use `d A^{K-1}` for `K`-step features), horizon,
/// action count and failure probability.
pub fn auto_parameters(
    gap: f64,
    theta: f64,
    dim: usize,
    horizon: usize,
    actions: usize,
    delta: f64,
    multipliers: Multipliers,
) -> Result<AutoParameters> {
    positive("gap", gap)?;
    positive("theta", theta)?;
    positive("c_m", multipliers.c_m)?;
    positive("c_m_prime", multipliers.c_m_prime)?;
    positive("c_epsilon", multipliers.c_epsilon)?;
    if let Some(cap) = multipliers.epsilon_max {
        positive("epsilon_max", cap)?;
    }
    if dim == 0 || horizon == 0 || actions == 0 {
        return Err(Error::invalid("d, H and A must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if gap > horizon as f64 {
        return Err(Error::invalid(format!(
            "gap {gap} exceeds the horizon {horizon}"
        )));
    }
    let (d, h, a) = (dim as f64, horizon as f64, actions as f64);
    let e = std::f64::consts::E;
    let raw_epsilon = multipliers.c_epsilon * gap / (6.0 * theta);
    let epsilon = multipliers
        .epsilon_max
        .map_or(raw_epsilon, |cap| raw_epsilon.min(cap));
    let bad_event_budget = ceil_count(h * d / (epsilon * epsilon) * (e + 1.0 / epsilon).ln());
    let delta_prime = delta / (bad_event_budget as f64 * (a + 1.0) * h);
    let log_factor = (d * theta / gap + e).ln();
    let log_conf = (1.0 / delta_prime).ln();
    let m =
        ceil_count(multipliers.c_m * log_conf * theta.powi(3) * h * d * log_factor / gap.powi(3));
    let m_prime =
        ceil_count(multipliers.c_m_prime * log_conf * theta * h * h * d * log_factor / gap.powi(3));
    Ok(AutoParameters {
        gap,
        theta,
        dim,
        horizon,
        actions,
        delta,
        multipliers,
        raw_epsilon,
        epsilon,
        bad_event_budget,
        delta_prime,
        log_factor,
        m,
        m_prime,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Primal,
    /// Kernel ridge regression on observation batches (one-step features only).
    Kernel {
        kernel: BaseKernel,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqdpConfig {
    pub m: usize,
    pub m_prime: usize,
    pub epsilon: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_depth")]
    pub future_depth: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_cap")]
    pub max_bad_events: usize,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.05
}
fn default_depth() -> usize {
    1
}
fn default_mode() -> Mode {
    Mode::Primal
}
fn default_cap() -> usize {
    DEFAULT_MAX_BAD_EVENTS
}

pub const DEFAULT_MAX_BAD_EVENTS: usize = 100_000;

impl EqdpConfig {
    pub fn new(m: usize, m_prime: usize, epsilon: f64) -> Self {
        EqdpConfig {
            m,
            m_prime,
            epsilon,
            lambda: default_lambda(),
            delta: default_delta(),
            future_depth: default_depth(),
            mode: default_mode(),
            max_bad_events: default_cap(),
        }
    }

    /// Config from [`auto_parameters`] output (sizes clamped to `usize`). The
    /// bad-event cap is the budget `N'`.
    pub fn from_auto(p: &AutoParameters) -> Self {
        let clamp = |v: u64| usize::try_from(v).unwrap_or(usize::MAX);
        let mut c = EqdpConfig::new(clamp(p.m), clamp(p.m_prime), p.epsilon);
        c.delta = p.delta;
        c.max_bad_events = clamp(p.bad_event_budget);
        c
    }

    pub fn with_future_depth(mut self, k: usize) -> Self {
        self.future_depth = k;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_max_bad_events(mut self, cap: usize) -> Self {
        self.max_bad_events = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m_prime == 0 {
            return Err(Error::invalid("M and M' must be at least 1"));
        }
        positive("epsilon", self.epsilon)?;
        positive("lambda", self.lambda)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.future_depth == 0 {
            return Err(Error::invalid("future depth must be at least 1"));
        }
        if self.max_bad_events == 0 {
            return Err(Error::invalid("bad-event cap must be at least 1"));
        }
        if matches!(self.mode, Mode::Kernel { .. }) && self.future_depth != 1 {
            return Err(Error::invalid(
                "kernel mode supports one-step features only",
            ));
        }
        Ok(())
    }
}
