//! Conjugate Bayesian linear regression with a binary action and closed-form
//! Thompson selection probability.
//!
//! Outcome model: `r = g(s)ᵀβ + a·h(s)ᵀθ + ε`, `ε ~ N(0, σ²)`, with a Gaussian
//! prior on `w = [β; θ]` held in precision form.

use serde::{Deserialize, Serialize};

use super::normal::std_normal_cdf;
use super::{FeatureSnapshot, ModelConfig, PolicyError, PosteriorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Withhold = 0,
    Deliver = 1,
}

impl Action {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.as_u8()
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Action::Withhold),
            1 => Ok(Action::Deliver),
            other => Err(format!("action must be 0 or 1, got {other}")),
        }
    }
}

/// Unclipped and clipped probability of delivering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionProbability {
    pub raw: f64,
    pub clipped: f64,
}

/// One labelled observation fed to the update.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Ledger seq of the OUTCOME_OBSERVED event that carried the reward.
    pub seq: u64,
    pub snapshot: &'a FeatureSnapshot,
    pub action: Action,
    pub reward: f64,
}

pub fn init_state(config: &ModelConfig) -> Result<PosteriorState, PolicyError> {
    config.validate()?;
    let d = config.dim();
    let mut precision = vec![0.0; d * d];
    for i in 0..d {
        precision[i * d + i] = config.prior_precision_scale;
    }
    PosteriorState::from_parts(config.prior_mean.clone(), precision, 0, None)
}

fn check_dims(
    state: &PosteriorState,
    snapshot: &FeatureSnapshot,
    config: &ModelConfig,
) -> Result<(), PolicyError> {
    if snapshot.baseline().len() != config.baseline_dim
        || snapshot.treatment().len() != config.treatment_dim
    {
        return Err(PolicyError::Config(format!(
            "snapshot dims ({}, {}) do not match config ({}, {})",
            snapshot.baseline().len(),
            snapshot.treatment().len(),
            config.baseline_dim,
            config.treatment_dim
        )));
    }
    if state.dim() != config.dim() {
        return Err(PolicyError::Config(format!(
            "state dim {} does not match config dim {}",
            state.dim(),
            config.dim()
        )));
    }
    Ok(())
}

/// Posterior probability that delivering beats withholding, `P(h(s)ᵀθ̃ > 0)`,
/// clipped to `[clip_min, clip_max]`.
pub fn action_probability(
    state: &PosteriorState,
    snapshot: &FeatureSnapshot,
    config: &ModelConfig,
) -> Result<ActionProbability, PolicyError> {
    check_dims(state, snapshot, config)?;
    let chol = state.cholesky()?;
    let db = config.baseline_dim;
    let h = snapshot.treatment();

    let advantage: f64 = h.iter().zip(&state.mean()[db..]).map(|(x, m)| x * m).sum();
    let mut z = vec![0.0; config.dim()];
    z[db..].copy_from_slice(h);
    let variance = chol.inverse_quadratic_form(&z);
    if !advantage.is_finite() || !variance.is_finite() {
        return Err(PolicyError::Numerical(format!(
            "non-finite advantage {advantage} or variance {variance}"
        )));
    }

    let raw = if variance > 0.0 {
        std_normal_cdf(advantage / variance.sqrt())
    } else if advantage > 0.0 {
        1.0
    } else if advantage < 0.0 {
        0.0
    } else {
        0.5
    };
    let clipped = raw.max(config.clip_min).min(config.clip_max);
    Ok(ActionProbability { raw, clipped })
}

/// Closed-form posterior update on a batch.
///
/// With `x = [g(s); a·h(s)]`: `Λ' = Λ + σ⁻² Σ x xᵀ` and
/// `μ' = Λ'⁻¹ (Λμ + σ⁻² Σ x r)`. Sums run in batch order; the solve is a
/// Cholesky solve. The input state is not modified.
pub fn update_posterior(
    state: &PosteriorState,
    batch: &[Observation<'_>],
    config: &ModelConfig,
) -> Result<PosteriorState, PolicyError> {
    if batch.is_empty() {
        return Ok(state.clone());
    }
    for obs in batch {
        check_dims(state, obs.snapshot, config)?;
        if !obs.reward.is_finite() {
            return Err(PolicyError::Data(format!(
                "non-finite reward {} at seq {}",
                obs.reward, obs.seq
            )));
        }
    }
    let d = config.dim();
    let db = config.baseline_dim;

    let mut gram = vec![0.0; d * d];
    let mut cross = vec![0.0; d];
    let mut x = vec![0.0; d];
    for obs in batch {
        x[..db].copy_from_slice(obs.snapshot.baseline());
        let a = obs.action.as_f64();
        for (xi, hi) in x[db..].iter_mut().zip(obs.snapshot.treatment()) {
            *xi = a * hi;
        }
        for i in 0..d {
            for j in i..d {
                gram[i * d + j] += x[i] * x[j];
            }
            cross[i] += x[i] * obs.reward;
        }
    }

    let inv_noise = 1.0 / config.noise_variance;
    let mut precision = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v = state.precision_at(i, j) + inv_noise * gram[i * d + j];
            precision[i * d + j] = v;
            precision[j * d + i] = v;
        }
    }

    let mut rhs = vec![0.0; d];
    for i in 0..d {
        let mut prior_term = 0.0;
        for j in 0..d {
            prior_term += state.precision_at(i, j) * state.mean()[j];
        }
        rhs[i] = prior_term + inv_noise * cross[i];
    }

    let chol = super::linalg::Cholesky::factor(&precision, d).map_err(|e| {
        PolicyError::Numerical(format!(
            "updated precision not positive definite (pivot {} = {})",
            e.pivot, e.value
        ))
    })?;
    let mean = chol.solve(&rhs);
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(PolicyError::Numerical("updated mean is not finite".into()));
    }
    let last = batch.last().map(|o| o.seq);
    PosteriorState::from_parts(
        mean,
        precision,
        state.update_count() + batch.len() as u64,
        last,
    )
}
