//! The online decision algorithm: a two-action contextual bandit with
//! conjugate Gaussian updates and closed-form Thompson probabilities.
//!
//! Every operation is a pure function of immutable values.

mod bandit;
mod config;
mod error;
pub mod linalg;
mod logic;
pub mod normal;
mod random;
mod snapshot;
mod state;

use serde::{Deserialize, Serialize};

pub use bandit::{action_probability, init_state, update_posterior, Action, ActionProbability, Observation};
pub use config::ModelConfig;
pub use error::PolicyError;
pub use logic::{builtin_logic, ConjugateThompson, LogicRegistry, PolicyLogic};
pub use random::{decide, decision_uniform, derive_decision_seed, derive_substream_seed, splitmix};
pub use snapshot::{FeatureEntry, FeatureSnapshot, Provenance};
pub use state::{canonical_deserialize, canonical_serialize, PosteriorState};

use crate::codec::hex_f64;

/// Probability used when the learner cannot decide: uniform over two actions.
pub const FALLBACK_PROBABILITY: f64 = 0.5;

/// Everything logged about one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub participant_id: String,
    pub decision_index: u64,
    #[serde(with = "hex_f64")]
    pub pi_raw: f64,
    #[serde(with = "hex_f64")]
    pub pi: f64,
    pub seed: u64,
    pub action: Action,
    pub fallback: bool,
    pub fallback_reason: Option<String>,
    pub version_id: String,
}
