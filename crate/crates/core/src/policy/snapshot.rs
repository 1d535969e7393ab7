use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::codec::{hex_f64, hex_f64_vec};

/// Where a feature value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Imputed,
    Default,
}

/// One raw input that went into a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    #[serde(with = "hex_f64")]
    pub value: f64,
    pub provenance: Provenance,
    /// Set exactly when `provenance` is `Imputed`.
    pub imputation_method: Option<String>,
    /// Device clock of the source datum (none for defaults).
    pub device_ts: Option<i64>,
    /// Ledger seq of the DATA_INGESTED event the value was taken from.
    pub source_seq: Option<u64>,
}

/// The exact feature vectors used at one decision point, plus the raw
/// inputs they were built from. Immutable once assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSnapshot {
    #[serde(with = "hex_f64_vec")]
    baseline: Vec<f64>,
    #[serde(with = "hex_f64_vec")]
    treatment: Vec<f64>,
    entries: Vec<FeatureEntry>,
    assembled_ts: i64,
}

impl FeatureSnapshot {
    pub fn new(
        baseline: Vec<f64>,
        treatment: Vec<f64>,
        entries: Vec<FeatureEntry>,
        assembled_ts: i64,
    ) -> Result<Self, PolicyError> {
        let snapshot = Self {
            baseline,
            treatment,
            entries,
            assembled_ts,
        };
        snapshot.check()?;
        Ok(snapshot)
    }

    /// Snapshot with bare vectors and no raw-input bookkeeping.
    pub fn from_vectors(baseline: Vec<f64>, treatment: Vec<f64>) -> Self {
        Self {
            baseline,
            treatment,
            entries: Vec::new(),
            assembled_ts: 0,
        }
    }

    pub fn check(&self) -> Result<(), PolicyError> {
        for e in &self.entries {
            let imputed = e.provenance == Provenance::Imputed;
            if imputed != e.imputation_method.is_some() {
                return Err(PolicyError::Data(format!(
                    "feature {:?}: imputation_method must be set exactly for imputed entries",
                    e.name
                )));
            }
        }
        Ok(())
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn assembled_ts(&self) -> i64 {
        self.assembled_ts
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries.iter().filter(|e| e.provenance == provenance).count()
    }
}
