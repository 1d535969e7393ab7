use std::collections::BTreeMap;

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;

use super::EnvironmentSpec;
use crate::policy::{derive_substream_seed, splitmix, Action};
use crate::runtime::{FeatureMap, ENGAGEMENT_FEATURE, OUTCOME_FEATURE};

pub(crate) fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn normal(rng: &mut SplitMix64) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn substream(master_seed: u64, purpose: &str, participant_id: &str) -> SplitMix64 {
    splitmix(derive_substream_seed(master_seed, &format!("{purpose}/{participant_id}"), 0))
}

/// One simulated participant. Weights are drawn once; engagement and the
/// previous outcome evolve with the actions taken.
#[derive(Debug, Clone)]
pub struct ParticipantTwin {
    pub participant_id: String,
    pub baseline_weights: Vec<f64>,
    pub effect_weights: Vec<f64>,
    pub engagement: f64,
    pub prior_outcome: f64,
    noise: SplitMix64,
}

/// What the environment did at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Raw context the decision was made in.
    pub context: BTreeMap<String, f64>,
    pub baseline: Vec<f64>,
    pub treatment: Vec<f64>,
    /// `E[y | a = 0]`.
    pub expected_base: f64,
    /// `E[y | a = 1] - E[y | a = 0]`.
    pub effect: f64,
    pub outcome: f64,
}

impl ParticipantTwin {
    /// Realizes participant weights from the `twin-params` substream.
    pub fn realize(env: &EnvironmentSpec, participant_id: &str, master_seed: u64) -> Self {
        let mut params = substream(master_seed, "twin-params", participant_id);
        let baseline_weights = env
            .baseline_mean
            .iter()
            .map(|m| m + env.baseline_sd * normal(&mut params))
            .collect();
        let effect_weights = env
            .effect_mean
            .iter()
            .map(|m| m + env.effect_sd * normal(&mut params))
            .collect();
        Self {
            participant_id: participant_id.to_owned(),
            baseline_weights,
            effect_weights,
            engagement: 0.0,
            prior_outcome: 0.0,
            noise: substream(master_seed, "twin-noise", participant_id),
        }
    }

    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise = splitmix(seed);
        self
    }

    pub fn context(&self) -> BTreeMap<String, f64> {
        [
            (OUTCOME_FEATURE.to_owned(), self.prior_outcome),
            (ENGAGEMENT_FEATURE.to_owned(), self.engagement),
        ]
        .into()
    }

    /// Advances one decision point:
    /// `y = g(s)ᵀb + drift·t + a·h(s)ᵀθ + ε` and
    /// `E' = clamp(ρE + κa + η, 0, 1)`.
    pub fn step(
        &mut self,
        env: &EnvironmentSpec,
        features: &FeatureMap,
        t: u64,
        slot: usize,
        points_per_day: usize,
        action: Action,
    ) -> StepOutcome {
        let context = self.context();
        let baseline = features.baseline_vector(&context, slot, points_per_day);
        let treatment = features.treatment_vector(&context, slot, points_per_day);
        let expected_base = dot(&baseline, &self.baseline_weights) + env.drift * t as f64;
        let effect = dot(&treatment, &self.effect_weights);

        let eps = normal(&mut self.noise);
        let eta = normal(&mut self.noise);
        let a = action.as_f64();
        let outcome = expected_base + a * effect + env.outcome_noise_sd * eps;
        let next = env.engagement_persistence * self.engagement
            + env.action_engagement_boost * a
            + env.engagement_noise_sd * eta;
        self.engagement = next.clamp(0.0, 1.0);
        self.prior_outcome = outcome;

        StepOutcome { context, baseline, treatment, expected_base, effect, outcome }
    }
}

/// Functional form of [`ParticipantTwin::step`].
pub fn step_participant(
    twin: &ParticipantTwin,
    env: &EnvironmentSpec,
    features: &FeatureMap,
    t: u64,
    slot: usize,
    points_per_day: usize,
    action: Action,
) -> (ParticipantTwin, StepOutcome) {
    let mut next = twin.clone();
    let out = next.step(env, features, t, slot, points_per_day, action);
    (next, out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
