//! Exact open-loop policy learning in POMDPs whose latent transitions are
//! deterministic and whose emissions are stochastic.
//!
//! * [`pomdp`]: data model, generative access and sample ledger.
//! * [`env`]: tabular, Gaussian and overcomplete environments, generators and
//!   the JSON document format.
//! * [`oracle`]: exact dynamic programming and the assumption auditor.
//! * [`estimation`]: Monte-Carlo feature and reward estimators.
//! * [`regression`]: primal ridge and dual kernel ridge states.
//! * [`eqdp`]: the learner.

pub mod env;
pub mod eqdp;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod oracle;
pub mod pomdp;
pub mod regression;

pub use error::{Error, Result};
pub use pomdp::{
    ActionSequence, GroundTruth, LedgerSnapshot, Observation, Pomdp, SampleAccess, Simulator,
};
