use serde::{Deserialize, Serialize};

use super::TwinError;

/// Generative parameters of one simulated environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    /// Population mean of the treatment-effect weights (length `d_h`).
    pub effect_mean: Vec<f64>,
    /// Per-participant spread of the treatment-effect weights.
    pub effect_sd: f64,
    /// Population mean of the baseline weights (length `d_g`).
    pub baseline_mean: Vec<f64>,
    pub baseline_sd: f64,
    /// Intercept change per decision point.
    pub drift: f64,
    pub outcome_noise_sd: f64,
    pub engagement_persistence: f64,
    pub action_engagement_boost: f64,
    #[serde(default = "default_engagement_noise")]
    pub engagement_noise_sd: f64,
    /// Probability a datum never arrives.
    pub miss_prob: f64,
    /// Arrival delay in windows is `Geometric(p)` (failures before success).
    pub delay_geometric_p: f64,
    pub n_participants: usize,
    pub n_days: u64,
}

fn default_engagement_noise() -> f64 {
    0.1
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            effect_mean: vec![0.5, 0.0, 0.0],
            effect_sd: 0.0,
            baseline_mean: vec![1.0, 0.2, 0.0],
            baseline_sd: 0.0,
            drift: 0.0,
            outcome_noise_sd: 1.0,
            engagement_persistence: 0.5,
            action_engagement_boost: 0.2,
            engagement_noise_sd: default_engagement_noise(),
            miss_prob: 0.0,
            delay_geometric_p: 1.0,
            n_participants: 20,
            n_days: 28,
        }
    }
}

impl EnvironmentSpec {
    pub fn validate(&self, baseline_dim: usize, treatment_dim: usize) -> Result<(), TwinError> {
        let fail = |m: String| Err(TwinError::Config(m));
        if self.effect_mean.len() != treatment_dim {
            return fail(format!(
                "effect_mean has {} entries, treatment map has {treatment_dim}",
                self.effect_mean.len()
            ));
        }
        if self.baseline_mean.len() != baseline_dim {
            return fail(format!(
                "baseline_mean has {} entries, baseline map has {baseline_dim}",
                self.baseline_mean.len()
            ));
        }
        for (name, v) in [
            ("effect_sd", self.effect_sd),
            ("baseline_sd", self.baseline_sd),
            ("outcome_noise_sd", self.outcome_noise_sd),
            ("engagement_noise_sd", self.engagement_noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(0.0..1.0).contains(&self.engagement_persistence) {
            return fail("engagement_persistence must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return fail("miss_prob must lie in [0, 1]".into());
        }
        if !(self.delay_geometric_p > 0.0 && self.delay_geometric_p <= 1.0) {
            return fail("delay_geometric_p must lie in (0, 1]".into());
        }
        if self.n_participants == 0 || self.n_days == 0 {
            return fail("n_participants and n_days must be positive".into());
        }
        Ok(())
    }
}

/// Levels for every [`EnvironmentSpec`] field. Omitted axes default to the
/// single level of [`EnvironmentSpec::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridAxes {
    pub effect_mean: Vec<Vec<f64>>,
    pub effect_sd: Vec<f64>,
    pub baseline_mean: Vec<Vec<f64>>,
    pub baseline_sd: Vec<f64>,
    pub drift: Vec<f64>,
    pub outcome_noise_sd: Vec<f64>,
    pub engagement_persistence: Vec<f64>,
    pub action_engagement_boost: Vec<f64>,
    pub engagement_noise_sd: Vec<f64>,
    pub miss_prob: Vec<f64>,
    pub delay_geometric_p: Vec<f64>,
    pub n_participants: Vec<usize>,
    pub n_days: Vec<u64>,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self::single(&EnvironmentSpec::default())
    }
}

impl GridAxes {
    pub fn single(e: &EnvironmentSpec) -> Self {
        Self {
            effect_mean: vec![e.effect_mean.clone()],
            effect_sd: vec![e.effect_sd],
            baseline_mean: vec![e.baseline_mean.clone()],
            baseline_sd: vec![e.baseline_sd],
            drift: vec![e.drift],
            outcome_noise_sd: vec![e.outcome_noise_sd],
            engagement_persistence: vec![e.engagement_persistence],
            action_engagement_boost: vec![e.action_engagement_boost],
            engagement_noise_sd: vec![e.engagement_noise_sd],
            miss_prob: vec![e.miss_prob],
            delay_geometric_p: vec![e.delay_geometric_p],
            n_participants: vec![e.n_participants],
            n_days: vec![e.n_days],
        }
    }

    fn lens(&self) -> [(&'static str, usize); 13] {
        [
            ("effect_mean", self.effect_mean.len()),
            ("effect_sd", self.effect_sd.len()),
            ("baseline_mean", self.baseline_mean.len()),
            ("baseline_sd", self.baseline_sd.len()),
            ("drift", self.drift.len()),
            ("outcome_noise_sd", self.outcome_noise_sd.len()),
            ("engagement_persistence", self.engagement_persistence.len()),
            ("action_engagement_boost", self.action_engagement_boost.len()),
            ("engagement_noise_sd", self.engagement_noise_sd.len()),
            ("miss_prob", self.miss_prob.len()),
            ("delay_geometric_p", self.delay_geometric_p.len()),
            ("n_participants", self.n_participants.len()),
            ("n_days", self.n_days.len()),
        ]
    }
}

/// Cartesian product of the axes. Axes vary in field order with the first
/// field slowest; levels appear in the order given.
pub fn build_environment_grid(axes: &GridAxes) -> Result<Vec<EnvironmentSpec>, TwinError> {
    let lens = axes.lens();
    if let Some((name, _)) = lens.iter().find(|(_, n)| *n == 0) {
        return Err(TwinError::Config(format!("grid axis {name} has no levels")));
    }
    let total: usize = lens.iter().map(|(_, n)| n).product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = [0usize; 13];
        let mut rem = flat;
        for axis in (0..13).rev() {
            idx[axis] = rem % lens[axis].1;
            rem /= lens[axis].1;
        }
        out.push(EnvironmentSpec {
            effect_mean: axes.effect_mean[idx[0]].clone(),
            effect_sd: axes.effect_sd[idx[1]],
            baseline_mean: axes.baseline_mean[idx[2]].clone(),
            baseline_sd: axes.baseline_sd[idx[3]],
            drift: axes.drift[idx[4]],
            outcome_noise_sd: axes.outcome_noise_sd[idx[5]],
            engagement_persistence: axes.engagement_persistence[idx[6]],
            action_engagement_boost: axes.action_engagement_boost[idx[7]],
            engagement_noise_sd: axes.engagement_noise_sd[idx[8]],
            miss_prob: axes.miss_prob[idx[9]],
            delay_geometric_p: axes.delay_geometric_p[idx[10]],
            n_participants: axes.n_participants[idx[11]],
            n_days: axes.n_days[idx[12]],
        });
    }
    Ok(out)
}
