use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// One coordinate of a feature map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum FeatureTerm {
    /// Constant 1.
    Intercept,
    /// 1 in the second half of the day's decision points, else 0.
    TimeOfDay,
    /// A raw ingested feature, standardized if configured.
    Raw(String),
}

impl From<String> for FeatureTerm {
    fn from(s: String) -> Self {
        match s.as_str() {
            "intercept" => Self::Intercept,
            "time_of_day" => Self::TimeOfDay,
            _ => Self::Raw(s),
        }
    }
}

impl From<FeatureTerm> for String {
    fn from(t: FeatureTerm) -> String {
        match t {
            FeatureTerm::Intercept => "intercept".into(),
            FeatureTerm::TimeOfDay => "time_of_day".into(),
            FeatureTerm::Raw(name) => name,
        }
    }
}

pub const OUTCOME_FEATURE: &str = "outcome";
pub const ENGAGEMENT_FEATURE: &str = "engagement";

/// Maps raw inputs and the decision slot to the baseline vector `g(s)` and
/// the treatment vector `h(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub baseline: Vec<FeatureTerm>,
    pub treatment: Vec<FeatureTerm>,
    /// `name -> [center, scale]`; the term becomes `(x - center) / scale`.
    #[serde(default)]
    pub standardize: BTreeMap<String, [f64; 2]>,
}

impl Default for FeatureMap {
    /// `g = [1, outcome, time_of_day]`, `h = [1, outcome, engagement]`.
    fn default() -> Self {
        use FeatureTerm::*;
        Self {
            baseline: vec![Intercept, Raw(OUTCOME_FEATURE.into()), TimeOfDay],
            treatment: vec![Intercept, Raw(OUTCOME_FEATURE.into()), Raw(ENGAGEMENT_FEATURE.into())],
            standardize: BTreeMap::new(),
        }
    }
}

impl FeatureMap {
    pub fn validate(&self) -> Result<(), String> {
        if self.baseline.is_empty() || self.treatment.is_empty() {
            return Err("features.baseline and features.treatment must be non-empty".into());
        }
        for (name, [_, scale]) in &self.standardize {
            if !(*scale > 0.0 && scale.is_finite()) {
                return Err(format!("features.standardize.{name}: scale must be positive"));
            }
        }
        Ok(())
    }

    /// Raw feature names in sorted order.
    pub fn raw_features(&self) -> Vec<String> {
        let names: BTreeSet<&String> = self
            .baseline
            .iter()
            .chain(&self.treatment)
            .filter_map(|t| match t {
                FeatureTerm::Raw(n) => Some(n),
                _ => None,
            })
            .collect();
        names.into_iter().cloned().collect()
    }

    fn term(&self, term: &FeatureTerm, raw: &BTreeMap<String, f64>, slot: usize, k: usize) -> f64 {
        match term {
            FeatureTerm::Intercept => 1.0,
            FeatureTerm::TimeOfDay => {
                if 2 * slot >= k && k > 1 {
                    1.0
                } else {
                    0.0
                }
            }
            FeatureTerm::Raw(name) => {
                let x = raw.get(name).copied().unwrap_or(0.0);
                match self.standardize.get(name) {
                    Some([center, scale]) => (x - center) / scale,
                    None => x,
                }
            }
        }
    }

    pub fn baseline_vector(&self, raw: &BTreeMap<String, f64>, slot: usize, k: usize) -> Vec<f64> {
        self.baseline.iter().map(|t| self.term(t, raw, slot, k)).collect()
    }

    pub fn treatment_vector(&self, raw: &BTreeMap<String, f64>, slot: usize, k: usize) -> Vec<f64> {
        self.treatment.iter().map(|t| self.term(t, raw, slot, k)).collect()
    }
}

/// Last-observation-carried-forward for up to `horizon` decision points,
/// then per-feature defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationPolicy {
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub defaults: BTreeMap<String, f64>,
}

fn default_horizon() -> u64 {
    3
}

pub const LOCF: &str = "locf";

impl ImputationPolicy {
    pub fn for_features(features: &FeatureMap) -> Self {
        Self {
            horizon: default_horizon(),
            defaults: features.raw_features().into_iter().map(|n| (n, 0.0)).collect(),
        }
    }

    pub fn validate(&self, features: &FeatureMap) -> Result<(), String> {
        for name in features.raw_features() {
            match self.defaults.get(&name) {
                Some(v) if v.is_finite() => {}
                Some(_) => return Err(format!("imputation.defaults.{name} must be finite")),
                None => return Err(format!("imputation.defaults is missing feature {name:?}")),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_vectors() {
        let map = FeatureMap::default();
        let raw: BTreeMap<String, f64> =
            [("outcome".to_string(), 0.7), ("engagement".to_string(), 0.25)].into();
        assert_eq!(map.baseline_vector(&raw, 0, 2), vec![1.0, 0.7, 0.0]);
        assert_eq!(map.baseline_vector(&raw, 1, 2), vec![1.0, 0.7, 1.0]);
        assert_eq!(map.treatment_vector(&raw, 1, 2), vec![1.0, 0.7, 0.25]);
        assert_eq!(map.raw_features(), vec!["engagement", "outcome"]);
    }

    #[test]
    fn standardization() {
        let mut map = FeatureMap::default();
        map.standardize.insert("outcome".into(), [1.0, 2.0]);
        let raw: BTreeMap<String, f64> = [("outcome".to_string(), 2.0)].into();
        assert_eq!(map.baseline_vector(&raw, 0, 2)[1], 0.5);
    }

    #[test]
    fn defaults_must_cover_features() {
        let map = FeatureMap::default();
        let mut imp = ImputationPolicy::for_features(&map);
        imp.validate(&map).unwrap();
        imp.defaults.remove("engagement");
        assert!(imp.validate(&map).unwrap_err().contains("engagement"));
    }

    #[test]
    fn term_text_round_trip() {
        for s in ["intercept", "time_of_day", "engagement"] {
            assert_eq!(String::from(FeatureTerm::from(s.to_string())), s);
        }
    }
}
