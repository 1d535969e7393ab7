//! The run configuration file (TOML). Every parameter of a run lives here;
//! command-line flags only override scalars.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::ledger::EnvironmentProfile;
use crate::monitor::{default_rules, AlertRule};
use crate::policy::{builtin_logic, ConjugateThompson, LogicRegistry, ModelConfig, PolicyError, PolicyLogic};
use crate::runtime::{FaultInjection, FeatureMap, ImputationPolicy, LocalTime, Schedule};
use crate::twin::{
    build_environment_grid, tuning_grid, Candidate, EnvironmentSpec, GridAxes, TrialSetup,
    VersionUpgrade,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_owned(), message: message.into() }
}

/// Uses the leading `section.field` token of a validation message as the
/// field name when there is one.
fn invalid_prefixed(section: &str, message: String) -> ConfigError {
    let first = message.split_whitespace().next().unwrap_or_default().trim_end_matches(':');
    if first.starts_with(&format!("{section}.")) {
        let field = first.to_owned();
        invalid(&field, message)
    } else {
        invalid(section, message)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub decision_times: Vec<LocalTime>,
    pub update_time: LocalTime,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = Schedule::twice_daily(1);
        Self { decision_times: s.decision_times, update_time: s.update_time }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub noise_variance: f64,
    pub prior_precision_scale: f64,
    /// Zeros when omitted.
    pub prior_mean: Option<Vec<f64>>,
    pub clip_min: f64,
    pub clip_max: f64,
    pub version_id: String,
    pub logic: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            noise_variance: 1.0,
            prior_precision_scale: 1.0,
            prior_mean: None,
            clip_min: ModelConfig::DEFAULT_CLIP_MIN,
            clip_max: ModelConfig::DEFAULT_CLIP_MAX,
            version_id: "v1.0.0".to_owned(),
            logic: ConjugateThompson::NAME.to_owned(),
        }
    }
}

/// A policy version activated at the start of `activate_day`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionSection {
    pub id: String,
    #[serde(default = "default_logic")]
    pub logic: String,
    pub activate_day: u64,
}

fn default_logic() -> String {
    ConjugateThompson::NAME.to_owned()
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub environment: EnvironmentSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSection {
    pub name: String,
    pub prior_precision_scale: Option<f64>,
    pub noise_variance: Option<f64>,
    pub clip_min: Option<f64>,
    pub clip_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinSection {
    pub master_seed: u64,
    pub replicates: usize,
    pub grid: GridAxes,
    /// Candidates for `twin-run`; the base model alone when empty.
    pub candidates: Vec<CandidateSection>,
}

impl Default for TwinSection {
    fn default() -> Self {
        Self { master_seed: 0, replicates: 3, grid: GridAxes::default(), candidates: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub prior_precision_scale: Vec<f64>,
    pub noise_variance: Vec<f64>,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self { prior_precision_scale: vec![0.1, 1.0, 10.0], noise_variance: vec![0.5, 1.0, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stream_id: String,
    pub environment_profile: String,
    pub deployment_seed: u64,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub features: FeatureMap,
    /// Defaults to LOCF with horizon 3 and zero defaults.
    pub imputation: Option<ImputationPolicy>,
    pub injection: FaultInjection,
    pub versions: Vec<VersionSection>,
    pub simulate: SimulateSection,
    pub twin: TwinSection,
    pub tune: TuneSection,
    /// The default rule set when omitted.
    pub rules: Option<Vec<AlertRule>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stream_id: "deployment".to_owned(),
            environment_profile: "prod-sim".to_owned(),
            deployment_seed: 0,
            schedule: ScheduleSection::default(),
            model: ModelSection::default(),
            features: FeatureMap::default(),
            imputation: None,
            injection: FaultInjection::default(),
            versions: Vec::new(),
            simulate: SimulateSection::default(),
            twin: TwinSection::default(),
            tune: TuneSection::default(),
            rules: None,
        }
    }
}

fn logic_named(field: &str, name: &str) -> Result<Arc<dyn PolicyLogic>, ConfigError> {
    builtin_logic(name).ok_or_else(|| invalid(field, format!("unknown policy logic {name:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stream_id.is_empty() {
            return Err(invalid("stream_id", "must be non-empty"));
        }
        self.profile()?;
        self.schedule(1).validate().map_err(|m| invalid("schedule", m))?;
        self.features.validate().map_err(|m| invalid_prefixed("features", m))?;
        self.imputation()
            .validate(&self.features)
            .map_err(|m| invalid_prefixed("imputation", m))?;
        self.injection.validate().map_err(|m| invalid_prefixed("injection", m))?;
        self.model_config()?;
        logic_named("model.logic", &self.model.logic)?;
        self.upgrades()?;
        self.environment()
            .validate(self.features.baseline.len(), self.features.treatment.len())
            .map_err(|e| invalid("simulate.environment", e.to_string()))?;
        self.environment_grid()?;
        self.candidates()?;
        self.tune_candidates()?;
        for (i, rule) in self.rules().iter().enumerate() {
            rule.validate().map_err(|e| invalid(&format!("rules[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<EnvironmentProfile, ConfigError> {
        self.environment_profile.parse().map_err(|m: String| invalid("environment_profile", m))
    }

    pub fn schedule(&self, trial_days: u64) -> Schedule {
        Schedule {
            decision_times: self.schedule.decision_times.clone(),
            update_time: self.schedule.update_time,
            trial_days,
            start_ms: 0,
        }
    }

    pub fn imputation(&self) -> ImputationPolicy {
        self.imputation.clone().unwrap_or_else(|| ImputationPolicy::for_features(&self.features))
    }

    pub fn rules(&self) -> Vec<AlertRule> {
        self.rules.clone().unwrap_or_else(default_rules)
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        let m = &self.model;
        let mut config = ModelConfig::standard(self.features.baseline.len(), self.features.treatment.len());
        config.noise_variance = m.noise_variance;
        config.prior_precision_scale = m.prior_precision_scale;
        if let Some(mean) = &m.prior_mean {
            config.prior_mean = mean.clone();
        }
        config.clip_min = m.clip_min;
        config.clip_max = m.clip_max;
        config.version_id = m.version_id.clone();
        config.validate().map_err(|e| match e {
            PolicyError::Config(msg) => {
                let name = msg.split_whitespace().next().unwrap_or_default();
                invalid(&format!("model.{name}"), msg.clone())
            }
            other => invalid("model", other.to_string()),
        })?;
        Ok(config)
    }

    pub fn upgrades(&self) -> Result<Vec<VersionUpgrade>, ConfigError> {
        let mut out: Vec<VersionUpgrade> = Vec::new();
        for (i, v) in self.versions.iter().enumerate() {
            let field = format!("versions[{i}]");
            if v.id.is_empty() || v.id == self.model.version_id || out.iter().any(|u| u.version_id == v.id) {
                return Err(invalid(&format!("{field}.id"), format!("duplicate or empty version id {:?}", v.id)));
            }
            if v.activate_day == 0 || out.last().is_some_and(|u| u.day > v.activate_day) {
                return Err(invalid(
                    &format!("{field}.activate_day"),
                    "must be positive and non-decreasing",
                ));
            }
            out.push(VersionUpgrade {
                day: v.activate_day,
                version_id: v.id.clone(),
                logic: logic_named(&format!("{field}.logic"), &v.logic)?,
            });
        }
        Ok(out)
    }

    /// Version id to logic for the base model and every configured upgrade.
    pub fn registry(&self) -> Result<LogicRegistry, ConfigError> {
        Ok(self.deployment_candidate()?.logic_registry())
    }

    pub fn environment(&self) -> EnvironmentSpec {
        self.simulate.environment.clone()
    }

    pub fn trial_setup(&self) -> Result<TrialSetup, ConfigError> {
        Ok(TrialSetup {
            decision_times: self.schedule.decision_times.clone(),
            update_time: self.schedule.update_time,
            features: self.features.clone(),
            imputation: self.imputation(),
            injection: self.injection,
            profile: self.profile()?,
            stream_id: None,
        })
    }

    /// The deployment candidate: base model, base logic and configured
    /// upgrades.
    pub fn deployment_candidate(&self) -> Result<Candidate, ConfigError> {
        Ok(Candidate {
            name: self.stream_id.clone(),
            model: self.model_config()?,
            logic: logic_named("model.logic", &self.model.logic)?,
            upgrades: self.upgrades()?,
        })
    }

    pub fn environment_grid(&self) -> Result<Vec<EnvironmentSpec>, ConfigError> {
        let envs = build_environment_grid(&self.twin.grid).map_err(|e| invalid("twin.grid", e.to_string()))?;
        for env in &envs {
            env.validate(self.features.baseline.len(), self.features.treatment.len())
                .map_err(|e| invalid("twin.grid", e.to_string()))?;
        }
        Ok(envs)
    }

    pub fn candidates(&self) -> Result<Vec<Candidate>, ConfigError> {
        let base = self.model_config()?;
        let logic = logic_named("model.logic", &self.model.logic)?;
        if self.twin.candidates.is_empty() {
            return Ok(vec![Candidate { name: "base".into(), model: base, logic, upgrades: Vec::new() }]);
        }
        let mut out: Vec<Candidate> = Vec::new();
        for (i, c) in self.twin.candidates.iter().enumerate() {
            if c.name.is_empty() || out.iter().any(|o| o.name == c.name) {
                return Err(invalid(&format!("twin.candidates[{i}].name"), "empty or duplicate name"));
            }
            let mut model = base.clone();
            if let Some(v) = c.prior_precision_scale {
                model.prior_precision_scale = v;
            }
            if let Some(v) = c.noise_variance {
                model.noise_variance = v;
            }
            if let Some(v) = c.clip_min {
                model.clip_min = v;
            }
            if let Some(v) = c.clip_max {
                model.clip_max = v;
            }
            model
                .validate()
                .map_err(|e| invalid(&format!("twin.candidates[{i}]"), e.to_string()))?;
            out.push(Candidate { name: c.name.clone(), model, logic: logic.clone(), upgrades: Vec::new() });
        }
        Ok(out)
    }

    pub fn tune_candidates(&self) -> Result<Vec<Candidate>, ConfigError> {
        let t = &self.tune;
        if t.prior_precision_scale.is_empty() {
            return Err(invalid("tune.prior_precision_scale", "must be non-empty"));
        }
        if t.noise_variance.is_empty() {
            return Err(invalid("tune.noise_variance", "must be non-empty"));
        }
        let candidates = tuning_grid(&self.model_config()?, &t.prior_precision_scale, &t.noise_variance);
        for c in &candidates {
            c.model.validate().map_err(|e| invalid("tune", e.to_string()))?;
        }
        Ok(candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.model_config().unwrap().dim(), 6);
        assert_eq!(c.rules().len(), 4);
        assert_eq!(c.profile().unwrap(), EnvironmentProfile::ProdSim);
    }

    #[test]
    fn parses_sections() {
        let text = r#"
            stream_id = "study-a"
            deployment_seed = 7
            [model]
            noise_variance = 0.5
            clip_min = 0.2
            clip_max = 0.8
            [injection]
            delay = 0.05
            loss = 0.02
            policy_exception = 0.01
            [[versions]]
            id = "v2"
            activate_day = 3
            [simulate.environment]
            effect_mean = [1.0, 0.0, 0.0]
            effect_sd = 0.0
            baseline_mean = [0.0, 0.0, 0.0]
            baseline_sd = 0.0
            drift = 0.0
            outcome_noise_sd = 1.0
            engagement_persistence = 0.5
            action_engagement_boost = 0.0
            miss_prob = 0.0
            delay_geometric_p = 1.0
            n_participants = 4
            n_days = 3
            [[rules]]
            metric = "fallback_rate"
            comparator = ">"
            threshold = 0.1
            window = "trial"
            severity = "high"
        "#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.model_config().unwrap().clip_min, 0.2);
        assert_eq!(c.upgrades().unwrap()[0].day, 3);
        assert_eq!(c.environment().n_participants, 4);
        assert_eq!(c.rules().len(), 1);
        assert_eq!(c.injection.loss, 0.02);
    }

    fn field_of(text: &str) -> String {
        match RunConfig::parse(text).unwrap_err() {
            ConfigError::Invalid { field, .. } => field,
            other => other.to_string(),
        }
    }

    #[test]
    fn diagnostics_name_the_field() {
        assert_eq!(field_of("[model]\nclip_min = 0.95"), "model.clip_min");
        assert_eq!(field_of("[injection]\nloss = 2.0"), "injection.loss");
        assert_eq!(field_of("environment_profile = \"staging\""), "environment_profile");
        assert_eq!(field_of("[model]\nlogic = \"nope\""), "model.logic");
        assert_eq!(
            field_of("[[rules]]\nmetric = \"latency\"\ncomparator = \"<\"\nthreshold = 1.0\nwindow = \"day\"\nseverity = \"low\""),
            "rules[0]"
        );
        assert!(field_of("[model]\nclip_mn = 0.1").contains("clip_mn"));
    }
}
