use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::codec::{hex_f64, hex_f64_vec};

/// Hyperparameters of the conjugate Thompson-sampling policy.
///
/// The parameter vector is `[baseline weights; treatment weights]`, so the
/// prior mean has `baseline_dim + treatment_dim` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub baseline_dim: usize,
    pub treatment_dim: usize,
    #[serde(with = "hex_f64")]
    pub noise_variance: f64,
    #[serde(with = "hex_f64_vec")]
    pub prior_mean: Vec<f64>,
    #[serde(with = "hex_f64")]
    pub prior_precision_scale: f64,
    #[serde(with = "hex_f64")]
    pub clip_min: f64,
    #[serde(with = "hex_f64")]
    pub clip_max: f64,
    pub version_id: String,
}

impl ModelConfig {
    pub const DEFAULT_CLIP_MIN: f64 = 0.1;
    pub const DEFAULT_CLIP_MAX: f64 = 0.9;

    /// Zero prior mean, unit precision and noise, default clip bounds.
    pub fn standard(baseline_dim: usize, treatment_dim: usize) -> Self {
        Self {
            baseline_dim,
            treatment_dim,
            noise_variance: 1.0,
            prior_mean: vec![0.0; baseline_dim + treatment_dim],
            prior_precision_scale: 1.0,
            clip_min: Self::DEFAULT_CLIP_MIN,
            clip_max: Self::DEFAULT_CLIP_MAX,
            version_id: "v1.0.0".to_owned(),
        }
    }

    pub fn dim(&self) -> usize {
        self.baseline_dim + self.treatment_dim
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |msg: String| Err(PolicyError::Config(msg));
        if self.baseline_dim == 0 {
            return fail("baseline_dim must be positive".into());
        }
        if self.treatment_dim == 0 {
            return fail("treatment_dim must be positive".into());
        }
        if self.prior_mean.len() != self.dim() {
            return fail(format!(
                "prior_mean has {} entries, expected baseline_dim + treatment_dim = {}",
                self.prior_mean.len(),
                self.dim()
            ));
        }
        if self.prior_mean.iter().any(|m| !m.is_finite()) {
            return fail("prior_mean entries must be finite".into());
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return fail(format!("noise_variance must be positive, got {}", self.noise_variance));
        }
        if !(self.prior_precision_scale > 0.0 && self.prior_precision_scale.is_finite()) {
            return fail(format!(
                "prior_precision_scale must be positive, got {}",
                self.prior_precision_scale
            ));
        }
        if !(self.clip_min > 0.0 && self.clip_min <= 0.5) {
            return fail(format!("clip_min must lie in (0, 0.5], got {}", self.clip_min));
        }
        if !(self.clip_max >= 0.5 && self.clip_max < 1.0) {
            return fail(format!("clip_max must lie in [0.5, 1), got {}", self.clip_max));
        }
        if self.version_id.is_empty() {
            return fail("version_id must be non-empty".into());
        }
        Ok(())
    }
}
