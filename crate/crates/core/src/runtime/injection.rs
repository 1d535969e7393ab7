use serde::{Deserialize, Serialize};

use crate::policy::{decision_uniform, derive_substream_seed};

/// Failure-injection probabilities. `policy_exception` and `outage` act at
/// decision points; `delay` and `loss` act on data delivery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    #[serde(default)]
    pub policy_exception: f64,
    #[serde(default)]
    pub outage: f64,
    #[serde(default)]
    pub delay: f64,
    /// Extra delay in decision windows is `1 + Geometric(p)` when a datum is
    /// delayed.
    #[serde(default = "default_delay_p")]
    pub delay_geometric_p: f64,
    #[serde(default)]
    pub loss: f64,
}

fn default_delay_p() -> f64 {
    0.5
}

impl Default for FaultInjection {
    fn default() -> Self {
        Self {
            policy_exception: 0.0,
            outage: 0.0,
            delay: 0.0,
            delay_geometric_p: default_delay_p(),
            loss: 0.0,
        }
    }
}

impl FaultInjection {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("policy_exception", self.policy_exception),
            ("outage", self.outage),
            ("delay", self.delay),
            ("loss", self.loss),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("injection.{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.delay_geometric_p > 0.0 && self.delay_geometric_p <= 1.0) {
            return Err(format!(
                "injection.delay_geometric_p must lie in (0, 1], got {}",
                self.delay_geometric_p
            ));
        }
        Ok(())
    }

    /// Parses `"policy_exception=0.01,delay=0.05,loss=0.02"`; `exception`
    /// is accepted for `policy_exception`. Unnamed fields keep `self`'s values.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self, String> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("--inject: expected key=value, got {part:?}"))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| format!("--inject: {key} is not a number: {value:?}"))?;
            match key.trim() {
                "policy_exception" | "exception" => self.policy_exception = v,
                "outage" => self.outage = v,
                "delay" => self.delay = v,
                "delay_geometric_p" => self.delay_geometric_p = v,
                "loss" => self.loss = v,
                other => return Err(format!("--inject: unknown key {other:?}")),
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn fires(p: f64, seed: u64, tag: &str, participant_id: &str, index: u64) -> bool {
        if p <= 0.0 {
            return false;
        }
        let s = derive_substream_seed(seed, &format!("{tag}/{participant_id}"), index);
        decision_uniform(s) < p
    }

    pub fn policy_fails(&self, seed: u64, participant_id: &str, decision_index: u64) -> bool {
        Self::fires(self.policy_exception, seed, "inject-exception", participant_id, decision_index)
    }

    pub fn outage_at(&self, seed: u64, participant_id: &str, decision_index: u64) -> bool {
        Self::fires(self.outage, seed, "inject-outage", participant_id, decision_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides() {
        let f = FaultInjection::default()
            .with_overrides("exception=0.01, delay=0.05,loss=0.02")
            .unwrap();
        assert_eq!(f.policy_exception, 0.01);
        assert_eq!(f.delay, 0.05);
        assert_eq!(f.loss, 0.02);
        assert!(FaultInjection::default().with_overrides("bogus=1").is_err());
        assert!(FaultInjection::default().with_overrides("loss=2").is_err());
    }

    #[test]
    fn always_and_never() {
        let mut f = FaultInjection::default();
        assert!(!(0..100).any(|i| f.policy_fails(1, "p", i)));
        f.policy_exception = 1.0;
        assert!((0..100).all(|i| f.policy_fails(1, "p", i)));
    }
}
