use serde::{Deserialize, Serialize};

use crate::codec::{hex_bytes, hex_digest, hex_f64, Digest32};
use crate::policy::{DecisionRecord, FeatureSnapshot, ModelConfig};
use crate::runtime::Schedule;

pub const FORMAT_VERSION: u32 = 1;

/// Deployment environment a ledger belongs to. One ledger, one profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvironmentProfile {
    #[serde(rename = "dev")]
    Dev,
    #[serde(rename = "test")]
    Test,
    #[serde(rename = "prod-sim")]
    ProdSim,
}

impl EnvironmentProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dev => "dev",
            Self::Test => "test",
            Self::ProdSim => "prod-sim",
        }
    }
}

impl std::fmt::Display for EnvironmentProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvironmentProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dev" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            "prod-sim" => Ok(Self::ProdSim),
            other => Err(format!("unknown environment profile {other:?} (dev, test, prod-sim)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    LedgerHeader,
    DataIngested,
    FeatureSnapshot,
    Decision,
    OutcomeObserved,
    ModelUpdate,
    VersionChange,
    Error,
    Alert,
}

impl EventType {
    pub const ALL: [EventType; 9] = [
        Self::LedgerHeader,
        Self::DataIngested,
        Self::FeatureSnapshot,
        Self::Decision,
        Self::OutcomeObserved,
        Self::ModelUpdate,
        Self::VersionChange,
        Self::Error,
        Self::Alert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LedgerHeader => "LEDGER_HEADER",
            Self::DataIngested => "DATA_INGESTED",
            Self::FeatureSnapshot => "FEATURE_SNAPSHOT",
            Self::Decision => "DECISION",
            Self::OutcomeObserved => "OUTCOME_OBSERVED",
            Self::ModelUpdate => "MODEL_UPDATE",
            Self::VersionChange => "VERSION_CHANGE",
            Self::Error => "ERROR",
            Self::Alert => "ALERT",
        }
    }
}

impl std::fmt::Display for EventType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Record 0 of every ledger: what is needed to replay the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub format_version: u32,
    pub deployment_seed: u64,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub participants: Vec<String>,
    /// SHA-256 over the canonical encoding of `model` and `schedule`.
    #[serde(with = "hex_digest")]
    pub config_digest: Digest32,
}

impl LedgerHeader {
    pub fn new(
        deployment_seed: u64,
        model: ModelConfig,
        schedule: Schedule,
        participants: Vec<String>,
    ) -> Self {
        let config_digest = config_digest(&model, &schedule);
        Self {
            format_version: FORMAT_VERSION,
            deployment_seed,
            model,
            schedule,
            participants,
            config_digest,
        }
    }
}

pub fn config_digest(model: &ModelConfig, schedule: &Schedule) -> Digest32 {
    let value = serde_json::json!({ "model": model, "schedule": schedule });
    crate::codec::sha256(&serde_json::to_vec(&value).expect("config serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataIngested {
    pub participant_id: String,
    pub feature: String,
    #[serde(with = "hex_f64")]
    pub value: f64,
    /// Seq of the FEATURE_SNAPSHOT that had to do without this datum.
    pub supersedes_snapshot: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotTaken {
    pub participant_id: String,
    pub decision_index: u64,
    pub snapshot: FeatureSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMade {
    pub snapshot_seq: u64,
    pub record: DecisionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeObserved {
    pub participant_id: String,
    pub decision_index: u64,
    pub decision_seq: u64,
    #[serde(with = "hex_f64")]
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdatePayload {
    pub participant_id: String,
    pub batch_seqs: Vec<u64>,
    #[serde(with = "hex_digest")]
    pub pre_state_hash: Digest32,
    #[serde(with = "hex_digest")]
    pub post_state_hash: Digest32,
    /// Canonical PosteriorState encoding.
    #[serde(with = "hex_bytes")]
    pub post_state: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionChange {
    pub version_id: String,
    pub logic: String,
    #[serde(with = "hex_digest")]
    pub fingerprint: Digest32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub participant_id: Option<String>,
    pub decision_index: Option<u64>,
    pub kind: String,
    pub message: String,
    /// Outcome seqs discarded with a rejected update batch.
    pub discarded_seqs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub source: String,
    pub rule_index: u64,
    pub metric: String,
    pub comparator: String,
    #[serde(with = "hex_f64")]
    pub threshold: f64,
    pub window: String,
    pub day: Option<u64>,
    #[serde(with = "hex_f64")]
    pub observed: f64,
    pub severity: String,
}

/// Typed body of a ledger record, tagged by `event_type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_type", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    LedgerHeader(LedgerHeader),
    DataIngested(DataIngested),
    FeatureSnapshot(SnapshotTaken),
    Decision(DecisionMade),
    OutcomeObserved(OutcomeObserved),
    ModelUpdate(UpdatePayload),
    VersionChange(VersionChange),
    Error(ErrorEvent),
    Alert(AlertEvent),
}

impl Payload {
    pub fn event_type(&self) -> EventType {
        match self {
            Self::LedgerHeader(_) => EventType::LedgerHeader,
            Self::DataIngested(_) => EventType::DataIngested,
            Self::FeatureSnapshot(_) => EventType::FeatureSnapshot,
            Self::Decision(_) => EventType::Decision,
            Self::OutcomeObserved(_) => EventType::OutcomeObserved,
            Self::ModelUpdate(_) => EventType::ModelUpdate,
            Self::VersionChange(_) => EventType::VersionChange,
            Self::Error(_) => EventType::Error,
            Self::Alert(_) => EventType::Alert,
        }
    }
}

/// An event as submitted to [`super::Ledger::append`]; the ledger assigns
/// seq, version and hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub stream_id: String,
    pub environment_profile: EnvironmentProfile,
    pub device_ts: Option<i64>,
    pub backend_ts: i64,
    pub payload: Payload,
}

/// One hash-chained ledger record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    pub stream_id: String,
    pub environment_profile: EnvironmentProfile,
    pub device_ts: Option<i64>,
    pub backend_ts: i64,
    pub version_id: String,
    #[serde(flatten)]
    pub payload: Payload,
    #[serde(with = "hex_digest")]
    pub prev_hash: Digest32,
    #[serde(with = "hex_digest")]
    pub hash: Digest32,
}

impl EventEnvelope {
    pub fn event_type(&self) -> EventType {
        self.payload.event_type()
    }

    fn to_object(&self) -> serde_json::Map<String, serde_json::Value> {
        match serde_json::to_value(self).expect("envelope serializes") {
            serde_json::Value::Object(map) => map,
            _ => unreachable!("envelope serializes to an object"),
        }
    }

    /// The full record line (without trailing newline). Keys are sorted,
    /// there is no whitespace, and every float is a hex bit pattern.
    pub fn canonical_line(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_object()).expect("envelope serializes")
    }

    /// Bytes covered by `hash`: the canonical record minus the `hash` key.
    pub fn hashed_body(&self) -> Vec<u8> {
        let mut map = self.to_object();
        map.remove("hash");
        serde_json::to_vec(&map).expect("envelope serializes")
    }

    /// `SHA-256(prev_hash ‖ hashed_body)`.
    pub fn compute_hash(&self) -> Digest32 {
        crate::codec::sha256_concat(&[&self.prev_hash, &self.hashed_body()])
    }

    pub fn as_decision(&self) -> Option<&DecisionMade> {
        match &self.payload {
            Payload::Decision(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_snapshot(&self) -> Option<&SnapshotTaken> {
        match &self.payload {
            Payload::FeatureSnapshot(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_outcome(&self) -> Option<&OutcomeObserved> {
        match &self.payload {
            Payload::OutcomeObserved(o) => Some(o),
            _ => None,
        }
    }
}
