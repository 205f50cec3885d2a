//! JSON environment documents.
//!
//! ```text
//! {
//!   "version": 1,
//!   "kind": "tabular" | "gaussian" | "overcomplete",
//!   "sizes": { "states", "observations", "actions", "horizon", "extension_levels" },
//!   "transitions": [level][state][action] -> next state,
//!   "emissions": [matrix O x S per level]          (tabular, overcomplete)
//!   "means": [matrix d x S per level]              (gaussian)
//!   "rewards": { "noise": "deterministic" | "bernoulli", "means": [matrix S x A per level] },
//!   "feature": { "kind": "one_hot" | "scaled", "beta"? },
//!   "generation"?: { "generator", "seed", "attempts", "min_sigma"?, "min_gap"? },
//!   "multistep"?: { "depth", "witness" }            (overcomplete)
//! }
//! ```
//!
//! A matrix is `{ "rows", "cols", "data" }` with `data` row-major. Numbers are
//! written in scientific notation with 17 significant digits, which round-trips
//! every `f64` exactly.

use nalgebra::DMatrix;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{
    Environment, EnvironmentKind, GaussianPomdp, GenerationInfo, OvercompleteTabularPomdp,
    RewardNoise, TabularPomdp,
};
use crate::error::{Error, Result};
use crate::pomdp::Pomdp;

pub const SCHEMA_VERSION: u64 = 1;

fn precise(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.16e}")).expect("finite float literal")
}

fn precise_seq<S: Serializer>(data: &[f64], ser: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = ser.serialize_seq(Some(data.len()))?;
    for &v in data {
        seq.serialize_element(&precise(v))?;
    }
    seq.end()
}

fn precise_opt<S: Serializer>(v: &Option<f64>, ser: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => precise(*x).serialize(ser),
        None => ser.serialize_none(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Matrix {
    rows: usize,
    cols: usize,
    #[serde(serialize_with = "precise_seq")]
    data: Vec<f64>,
}

impl Matrix {
    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn into_dmatrix(self) -> Result<DMatrix<f64>> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::invalid(format!(
                "matrix declares {}x{} but has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sizes {
    states: usize,
    observations: usize,
    actions: usize,
    horizon: usize,
    #[serde(default)]
    extension_levels: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Rewards {
    noise: RewardNoise,
    means: Vec<Matrix>,
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum FeatureKind {
    OneHot,
    Scaled,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Feature {
    kind: FeatureKind,
    #[serde(
        default,
        serialize_with = "precise_opt",
        skip_serializing_if = "Option::is_none"
    )]
    beta: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Multistep {
    depth: usize,
    witness: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u64,
    kind: EnvironmentKind,
    sizes: Sizes,
    transitions: Vec<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emissions: Option<Vec<Matrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    means: Option<Vec<Matrix>>,
    rewards: Rewards,
    feature: Feature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generation: Option<GenerationInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    multistep: Option<Multistep>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u64,
}

fn tabular_doc(
    env: &TabularPomdp,
    kind: EnvironmentKind,
    multistep: Option<Multistep>,
) -> Document {
    let levels = env.horizon() + env.extension_levels();
    Document {
        version: SCHEMA_VERSION,
        kind,
        sizes: Sizes {
            states: env.state_count(),
            observations: env.observation_count(),
            actions: env.action_count(),
            horizon: env.horizon(),
            extension_levels: env.extension_levels(),
        },
        transitions: env.transitions.clone(),
        emissions: Some(
            (0..levels)
                .map(|h| Matrix::from_dmatrix(env.emission_matrix(h)))
                .collect(),
        ),
        means: None,
        rewards: Rewards {
            noise: env.reward_noise(),
            means: env.reward_means.iter().map(Matrix::from_dmatrix).collect(),
        },
        feature: Feature {
            kind: FeatureKind::OneHot,
            beta: None,
        },
        generation: env.generation.clone(),
        multistep,
    }
}

/// Renders `env` as a pretty-printed JSON document.
pub fn serialize(env: &Environment) -> String {
    let doc = match env {
        Environment::Tabular(e) => tabular_doc(e, EnvironmentKind::Tabular, None),
        Environment::Overcomplete(e) => tabular_doc(
            &e.base,
            EnvironmentKind::Overcomplete,
            Some(Multistep {
                depth: e.future_depth,
                witness: e.witness.clone(),
            }),
        ),
        Environment::Gaussian(e) => Document {
            version: SCHEMA_VERSION,
            kind: EnvironmentKind::Gaussian,
            sizes: Sizes {
                states: e.state_count(),
                observations: e.obs_dim(),
                actions: e.action_count(),
                horizon: e.horizon(),
                extension_levels: 0,
            },
            transitions: e.transitions.clone(),
            emissions: None,
            means: Some(e.means.iter().map(Matrix::from_dmatrix).collect()),
            rewards: Rewards {
                noise: e.reward_noise(),
                means: e.reward_means.iter().map(Matrix::from_dmatrix).collect(),
            },
            feature: Feature {
                kind: FeatureKind::Scaled,
                beta: Some(e.beta()),
            },
            generation: e.generation.clone(),
            multistep: None,
        },
    };
    let mut out =
        serde_json::to_string_pretty(&doc).expect("environment documents always serialize");
    out.push('\n');
    out
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn matrices(list: Option<Vec<Matrix>>, field: &str) -> Result<Vec<DMatrix<f64>>> {
    list.ok_or_else(|| Error::invalid(format!("document lacks \"{field}\"")))?
        .into_iter()
        .map(Matrix::into_dmatrix)
        .collect()
}

fn check_sizes(sizes: &Sizes, env: &dyn Pomdp, observations: usize) -> Result<()> {
    let declared = (
        sizes.states,
        sizes.observations,
        sizes.actions,
        sizes.horizon,
    );
    let found = (
        env.state_count(),
        observations,
        env.action_count(),
        env.horizon(),
    );
    if declared != found {
        return Err(Error::invalid(format!(
            "declared sizes (S, O, A, H) = {declared:?} disagree with the matrices {found:?}"
        )));
    }
    Ok(())
}

/// Parses a document produced by [`serialize`] (or written by hand).
pub fn deserialize(text: &str) -> Result<Environment> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(parse_error)?;
    if probe.version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: probe.version,
            expected: SCHEMA_VERSION,
        });
    }
    let doc: Document = serde_json::from_str(text).map_err(parse_error)?;
    let rewards = doc
        .rewards
        .means
        .into_iter()
        .map(Matrix::into_dmatrix)
        .collect::<Result<Vec<_>>>()?;
    match doc.kind {
        EnvironmentKind::Tabular | EnvironmentKind::Overcomplete => {
            if doc.feature.kind != FeatureKind::OneHot {
                return Err(Error::invalid("tabular environments use one-hot features"));
            }
            let emissions = matrices(doc.emissions, "emissions")?;
            let mut env =
                TabularPomdp::new(doc.transitions, emissions, rewards, doc.rewards.noise)?;
            check_sizes(&doc.sizes, &env, env.observation_count())?;
            if doc.sizes.extension_levels != env.extension_levels() {
                return Err(Error::invalid(
                    "declared extension_levels disagree with the matrices",
                ));
            }
            env.generation = doc.generation;
            if doc.kind == EnvironmentKind::Tabular {
                return Ok(Environment::Tabular(env));
            }
            let ms = doc
                .multistep
                .ok_or_else(|| Error::invalid("overcomplete document lacks \"multistep\""))?;
            if ms.depth < 2
                || ms.witness.len() + 1 != ms.depth
                || ms.witness.iter().any(|&a| a >= env.action_count())
            {
                return Err(Error::invalid(
                    "multistep witness must be K - 1 valid actions with K >= 2",
                ));
            }
            Ok(Environment::Overcomplete(OvercompleteTabularPomdp {
                base: env,
                future_depth: ms.depth,
                witness: ms.witness,
            }))
        }
        EnvironmentKind::Gaussian => {
            if doc.feature.kind != FeatureKind::Scaled {
                return Err(Error::invalid("gaussian environments use scaled features"));
            }
            let means = matrices(doc.means, "means")?;
            let mut env = GaussianPomdp::new(
                doc.transitions,
                means,
                rewards,
                doc.rewards.noise,
                doc.feature.beta,
            )?;
            check_sizes(&doc.sizes, &env, env.obs_dim())?;
            env.generation = doc.generation;
            Ok(Environment::Gaussian(env))
        }
    }
}
