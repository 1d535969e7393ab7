use std::collections::BTreeMap;
use std::sync::Arc;

use super::bandit::{self, ActionProbability, Observation};
use super::{FeatureSnapshot, ModelConfig, PolicyError, PosteriorState};
use crate::codec::{sha256, Digest32};

/// The operation set one algorithm version runs. Runtime and replay both go
/// through this trait, so a version's logic is the same code in both places.
pub trait PolicyLogic: Send + Sync {
    /// Stable identifier, also the source of the logic fingerprint.
    fn name(&self) -> &str;

    fn fingerprint(&self) -> Digest32 {
        sha256(self.name().as_bytes())
    }

    fn init_state(&self, config: &ModelConfig) -> Result<PosteriorState, PolicyError> {
        bandit::init_state(config)
    }

    fn action_probability(
        &self,
        state: &PosteriorState,
        snapshot: &FeatureSnapshot,
        config: &ModelConfig,
    ) -> Result<ActionProbability, PolicyError>;

    fn update_posterior(
        &self,
        state: &PosteriorState,
        batch: &[Observation<'_>],
        config: &ModelConfig,
    ) -> Result<PosteriorState, PolicyError>;
}

/// The conjugate Thompson-sampling policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConjugateThompson;

impl ConjugateThompson {
    pub const NAME: &'static str = "conjugate-ts";
}

impl PolicyLogic for ConjugateThompson {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn action_probability(
        &self,
        state: &PosteriorState,
        snapshot: &FeatureSnapshot,
        config: &ModelConfig,
    ) -> Result<ActionProbability, PolicyError> {
        bandit::action_probability(state, snapshot, config)
    }

    fn update_posterior(
        &self,
        state: &PosteriorState,
        batch: &[Observation<'_>],
        config: &ModelConfig,
    ) -> Result<PosteriorState, PolicyError> {
        bandit::update_posterior(state, batch, config)
    }
}

/// Built-in logic by name.
pub fn builtin_logic(name: &str) -> Option<Arc<dyn PolicyLogic>> {
    match name {
        ConjugateThompson::NAME => Some(Arc::new(ConjugateThompson)),
        _ => None,
    }
}

/// Maps version ids to the logic that version ran.
#[derive(Clone, Default)]
pub struct LogicRegistry {
    entries: BTreeMap<String, Arc<dyn PolicyLogic>>,
}

impl LogicRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, version_id: impl Into<String>, logic: Arc<dyn PolicyLogic>) -> Self {
        self.insert(version_id, logic);
        self
    }

    pub fn insert(&mut self, version_id: impl Into<String>, logic: Arc<dyn PolicyLogic>) {
        self.entries.insert(version_id.into(), logic);
    }

    pub fn remove(&mut self, version_id: &str) -> Option<Arc<dyn PolicyLogic>> {
        self.entries.remove(version_id)
    }

    pub fn get(&self, version_id: &str) -> Option<&Arc<dyn PolicyLogic>> {
        self.entries.get(version_id)
    }

    pub fn contains(&self, version_id: &str) -> bool {
        self.entries.contains_key(version_id)
    }

    pub fn versions(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl std::fmt::Debug for LogicRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(k, v)| (k, v.name())))
            .finish()
    }
}
