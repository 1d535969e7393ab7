//! The deployment loop: decision scheduling, data ingestion, snapshot
//! assembly with imputation, decisions with fallback, nightly updates and
//! version registration. Everything the loop sees or does is written to the
//! ledger before it is acted on.

mod features;
mod injection;
mod schedule;
mod versions;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use thiserror::Error;

pub use features::{
    FeatureMap, FeatureTerm, ImputationPolicy, ENGAGEMENT_FEATURE, LOCF, OUTCOME_FEATURE,
};
pub use injection::FaultInjection;
pub use schedule::{schedule_decision_points, LocalTime, Schedule, DAY_MS};
pub use versions::{VersionEntry, VersionRegistry};

use crate::ledger::{
    DataIngested, DecisionMade, EnvironmentProfile, ErrorEvent, Ledger, LedgerError, LedgerHeader,
    OutcomeObserved, Payload, SnapshotTaken, Store, UpdatePayload, VersionChange,
};
use crate::policy::{
    decide, derive_decision_seed, Action, ActionProbability, DecisionRecord, FeatureEntry,
    FeatureSnapshot, LogicRegistry, ModelConfig, Observation, PolicyError, PolicyLogic,
    PosteriorState, Provenance, FALLBACK_PROBABILITY,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Static description of one deployment.
#[derive(Debug, Clone)]
pub struct DeploymentSetup {
    pub stream_id: String,
    pub profile: EnvironmentProfile,
    pub deployment_seed: u64,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub features: FeatureMap,
    pub imputation: ImputationPolicy,
    pub injection: FaultInjection,
    pub participants: Vec<String>,
}

impl DeploymentSetup {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| format!("model: {e}"))?;
        self.schedule.validate()?;
        self.features.validate()?;
        self.imputation.validate(&self.features)?;
        self.injection.validate()?;
        if self.features.baseline.len() != self.model.baseline_dim {
            return Err(format!(
                "model.baseline_dim is {} but features.baseline has {} terms",
                self.model.baseline_dim,
                self.features.baseline.len()
            ));
        }
        if self.features.treatment.len() != self.model.treatment_dim {
            return Err(format!(
                "model.treatment_dim is {} but features.treatment has {} terms",
                self.model.treatment_dim,
                self.features.treatment.len()
            ));
        }
        if self.participants.is_empty() {
            return Err("participants must not be empty".into());
        }
        let mut ids = self.participants.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != self.participants.len() {
            return Err("participant ids must be unique".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Datum {
    seq: u64,
    value: f64,
    device_ts: i64,
    window: u64,
}

#[derive(Debug, Clone)]
struct PendingOutcome {
    seq: u64,
    decision_index: u64,
    reward: f64,
}

#[derive(Debug, Clone)]
struct ParticipantLog {
    state: PosteriorState,
    data: BTreeMap<String, Vec<Datum>>,
    snapshots: BTreeMap<u64, (u64, FeatureSnapshot)>,
    decisions: BTreeMap<u64, (u64, Action)>,
    pending: Vec<PendingOutcome>,
}

/// A running deployment bound to one ledger.
pub struct Deployment {
    setup: DeploymentSetup,
    ledger: Ledger,
    logic: LogicRegistry,
    versions: VersionRegistry,
    clock: i64,
    participants: BTreeMap<String, ParticipantLog>,
}

impl Deployment {
    /// Writes the header and activates `setup.model.version_id`, which must
    /// be present in `logic`.
    pub fn start(
        setup: DeploymentSetup,
        store: Box<dyn Store>,
        logic: LogicRegistry,
    ) -> Result<Self, RuntimeError> {
        setup.validate().map_err(RuntimeError::Config)?;
        let first_version = setup.model.version_id.clone();
        let initial_logic = logic
            .get(&first_version)
            .ok_or_else(|| {
                RuntimeError::Config(format!("no logic registered for version {first_version:?}"))
            })?
            .clone();
        let initial = initial_logic
            .init_state(&setup.model)
            .map_err(|e| RuntimeError::Config(e.to_string()))?;

        let header = LedgerHeader::new(
            setup.deployment_seed,
            setup.model.clone(),
            setup.schedule.clone(),
            setup.participants.clone(),
        );
        let clock = setup.schedule.start_ms;
        let ledger = Ledger::create(store, setup.stream_id.clone(), setup.profile, header, clock)?;
        let participants = setup
            .participants
            .iter()
            .map(|id| {
                let log = ParticipantLog {
                    state: initial.clone(),
                    data: BTreeMap::new(),
                    snapshots: BTreeMap::new(),
                    decisions: BTreeMap::new(),
                    pending: Vec::new(),
                };
                (id.clone(), log)
            })
            .collect();
        let mut deployment = Self {
            setup,
            ledger,
            logic,
            versions: VersionRegistry::new(),
            clock,
            participants,
        };
        deployment.register_version(&first_version)?;
        Ok(deployment)
    }

    pub fn setup(&self) -> &DeploymentSetup {
        &self.setup
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn versions(&self) -> &VersionRegistry {
        &self.versions
    }

    pub fn clock(&self) -> i64 {
        self.clock
    }

    /// Sets the backend clock stamped on subsequent events.
    pub fn set_clock(&mut self, ts: i64) {
        self.clock = ts;
    }

    pub fn state(&self, participant_id: &str) -> Option<&PosteriorState> {
        self.participants.get(participant_id).map(|p| &p.state)
    }

    /// Replaces a participant's live state, e.g. to simulate corruption.
    pub fn set_state(&mut self, participant_id: &str, state: PosteriorState) -> Result<(), RuntimeError> {
        self.participant_mut(participant_id)?.state = state;
        Ok(())
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    fn participant(&self, id: &str) -> Result<&ParticipantLog, RuntimeError> {
        self.participants
            .get(id)
            .ok_or_else(|| RuntimeError::Config(format!("unknown participant {id:?}")))
    }

    fn participant_mut(&mut self, id: &str) -> Result<&mut ParticipantLog, RuntimeError> {
        self.participants
            .get_mut(id)
            .ok_or_else(|| RuntimeError::Config(format!("unknown participant {id:?}")))
    }

    fn append(&self, device_ts: Option<i64>, payload: Payload) -> Result<u64, RuntimeError> {
        let draft = self.ledger.draft(device_ts, self.clock, payload);
        Ok(self.ledger.append(draft)?.seq)
    }

    fn active_logic(&self) -> Result<Arc<dyn PolicyLogic>, RuntimeError> {
        let active = self
            .versions
            .active()
            .ok_or_else(|| RuntimeError::Protocol("no version is active".into()))?;
        self.logic
            .get(&active.version_id)
            .cloned()
            .ok_or_else(|| RuntimeError::Config(format!("no logic for {:?}", active.version_id)))
    }

    /// Activates a new algorithm version; later events carry its id.
    pub fn register_version(&mut self, version_id: &str) -> Result<u64, RuntimeError> {
        if self.versions.contains(version_id) {
            return Err(RuntimeError::Config(format!(
                "version {version_id:?} was already activated"
            )));
        }
        let logic = self.logic.get(version_id).cloned().ok_or_else(|| {
            RuntimeError::Config(format!("no logic registered for version {version_id:?}"))
        })?;
        let fingerprint = logic.fingerprint();
        let seq = self.append(
            None,
            Payload::VersionChange(VersionChange {
                version_id: version_id.to_owned(),
                logic: logic.name().to_owned(),
                fingerprint,
            }),
        )?;
        self.versions
            .record(VersionEntry { version_id: version_id.to_owned(), activation_seq: seq, fingerprint })
            .map_err(RuntimeError::Config)?;
        Ok(seq)
    }

    /// Records one raw datum. If the snapshot for the datum's window was
    /// already assembled, the event names it as superseded; the snapshot
    /// itself is never touched.
    pub fn ingest_observation(
        &mut self,
        participant_id: &str,
        feature: &str,
        value: f64,
        device_ts: i64,
    ) -> Result<u64, RuntimeError> {
        let window = self.setup.schedule.window_of(device_ts);
        let supersedes = self.participant(participant_id)?.snapshots.get(&window).map(|(seq, _)| *seq);
        let seq = self.append(
            Some(device_ts),
            Payload::DataIngested(DataIngested {
                participant_id: participant_id.to_owned(),
                feature: feature.to_owned(),
                value,
                supersedes_snapshot: supersedes,
            }),
        )?;
        self.participant_mut(participant_id)?
            .data
            .entry(feature.to_owned())
            .or_default()
            .push(Datum { seq, value, device_ts, window });
        Ok(seq)
    }

    /// Records the reward for an earlier decision; it waits for the next
    /// update cycle.
    pub fn ingest_outcome(
        &mut self,
        participant_id: &str,
        decision_index: u64,
        reward: f64,
        device_ts: i64,
    ) -> Result<u64, RuntimeError> {
        let (decision_seq, _) = *self
            .participant(participant_id)?
            .decisions
            .get(&decision_index)
            .ok_or_else(|| {
                RuntimeError::Protocol(format!(
                    "outcome for {participant_id}/{decision_index} precedes its decision"
                ))
            })?;
        let seq = self.append(
            Some(device_ts),
            Payload::OutcomeObserved(OutcomeObserved {
                participant_id: participant_id.to_owned(),
                decision_index,
                decision_seq,
                reward,
            }),
        )?;
        self.participant_mut(participant_id)?
            .pending
            .push(PendingOutcome { seq, decision_index, reward });
        Ok(seq)
    }

    /// Builds and logs the snapshot for a decision point. Each raw feature
    /// takes the latest value (by device time, ties to the lowest seq) from
    /// the last `horizon` windows: `observed` if from the current window,
    /// `imputed` (LOCF) if older, otherwise the configured default.
    pub fn assemble_features(
        &mut self,
        participant_id: &str,
        decision_index: u64,
    ) -> Result<(u64, FeatureSnapshot), RuntimeError> {
        let schedule = &self.setup.schedule;
        let due = schedule.due_ts(decision_index);
        let horizon = self.setup.imputation.horizon;
        let log = self.participant(participant_id)?;
        if log.snapshots.contains_key(&decision_index) {
            return Err(RuntimeError::Protocol(format!(
                "snapshot for {participant_id}/{decision_index} already exists"
            )));
        }

        let mut raw = BTreeMap::new();
        let mut entries = Vec::new();
        for name in self.setup.features.raw_features() {
            let best = log
                .data
                .get(&name)
                .into_iter()
                .flatten()
                .filter(|d| d.device_ts <= due && d.window + horizon >= decision_index)
                .min_by(|a, b| b.device_ts.cmp(&a.device_ts).then(a.seq.cmp(&b.seq)));
            let entry = match best {
                Some(d) if d.window == decision_index => FeatureEntry {
                    name: name.clone(),
                    value: d.value,
                    provenance: Provenance::Observed,
                    imputation_method: None,
                    device_ts: Some(d.device_ts),
                    source_seq: Some(d.seq),
                },
                Some(d) => FeatureEntry {
                    name: name.clone(),
                    value: d.value,
                    provenance: Provenance::Imputed,
                    imputation_method: Some(LOCF.to_owned()),
                    device_ts: Some(d.device_ts),
                    source_seq: Some(d.seq),
                },
                None => FeatureEntry {
                    name: name.clone(),
                    value: self.setup.imputation.defaults[&name],
                    provenance: Provenance::Default,
                    imputation_method: None,
                    device_ts: None,
                    source_seq: None,
                },
            };
            raw.insert(name, entry.value);
            entries.push(entry);
        }

        let slot = schedule.slot_of(decision_index);
        let k = schedule.points_per_day() as usize;
        let snapshot = FeatureSnapshot::new(
            self.setup.features.baseline_vector(&raw, slot, k),
            self.setup.features.treatment_vector(&raw, slot, k),
            entries,
            self.clock,
        )
        .map_err(|e| RuntimeError::Protocol(e.to_string()))?;

        let seq = self.append(
            None,
            Payload::FeatureSnapshot(SnapshotTaken {
                participant_id: participant_id.to_owned(),
                decision_index,
                snapshot: snapshot.clone(),
            }),
        )?;
        self.participant_mut(participant_id)?
            .snapshots
            .insert(decision_index, (seq, snapshot.clone()));
        Ok((seq, snapshot))
    }

    fn error_event(
        &self,
        participant_id: Option<&str>,
        decision_index: Option<u64>,
        kind: &str,
        message: String,
        discarded_seqs: Vec<u64>,
    ) -> Result<u64, RuntimeError> {
        self.append(
            None,
            Payload::Error(ErrorEvent {
                participant_id: participant_id.map(str::to_owned),
                decision_index,
                kind: kind.to_owned(),
                message,
                discarded_seqs,
            }),
        )
    }

    fn guarded_probability(
        &self,
        logic: &dyn PolicyLogic,
        state: &PosteriorState,
        snapshot: &FeatureSnapshot,
        participant_id: &str,
        decision_index: u64,
    ) -> Result<ActionProbability, PolicyError> {
        if self.setup.injection.policy_fails(self.setup.deployment_seed, participant_id, decision_index) {
            return Err(PolicyError::Injected("policy exception".into()));
        }
        let p = catch_unwind(AssertUnwindSafe(|| {
            logic.action_probability(state, snapshot, &self.setup.model)
        }))
        .map_err(|panic| PolicyError::Numerical(format!("policy panicked: {}", panic_message(&panic))))??;
        if !(0.0..=1.0).contains(&p.clipped) || !(0.0..=1.0).contains(&p.raw) {
            return Err(PolicyError::Numerical(format!(
                "probability out of range: raw {} clipped {}",
                p.raw, p.clipped
            )));
        }
        Ok(p)
    }

    /// Produces the decision for an assembled decision point. Any policy
    /// failure becomes a fallback decision with probability 1/2; only
    /// storage errors escape.
    pub fn make_decision(
        &mut self,
        participant_id: &str,
        decision_index: u64,
    ) -> Result<DecisionRecord, RuntimeError> {
        let log = self.participant(participant_id)?;
        if log.decisions.contains_key(&decision_index) {
            return Err(RuntimeError::Protocol(format!(
                "decision {participant_id}/{decision_index} already made"
            )));
        }
        let (snapshot_seq, snapshot) = log.snapshots.get(&decision_index).cloned().ok_or_else(|| {
            RuntimeError::Protocol(format!(
                "no snapshot assembled for {participant_id}/{decision_index}"
            ))
        })?;
        let state = log.state.clone();
        let seed = derive_decision_seed(self.setup.deployment_seed, participant_id, decision_index);
        let version_id = self.ledger.active_version();
        let outcome = self.active_logic().map(|logic| {
            self.guarded_probability(&*logic, &state, &snapshot, participant_id, decision_index)
        })?;

        let record = match outcome {
            Ok(p) => DecisionRecord {
                participant_id: participant_id.to_owned(),
                decision_index,
                pi_raw: p.raw,
                pi: p.clipped,
                seed,
                action: decide(p.clipped, seed),
                fallback: false,
                fallback_reason: None,
                version_id,
            },
            Err(err) => {
                let reason = err.to_string();
                self.error_event(
                    Some(participant_id),
                    Some(decision_index),
                    "policy",
                    reason.clone(),
                    Vec::new(),
                )?;
                DecisionRecord {
                    participant_id: participant_id.to_owned(),
                    decision_index,
                    pi_raw: FALLBACK_PROBABILITY,
                    pi: FALLBACK_PROBABILITY,
                    seed,
                    action: decide(FALLBACK_PROBABILITY, seed),
                    fallback: true,
                    fallback_reason: Some(reason),
                    version_id,
                }
            }
        };
        let seq = self.append(
            None,
            Payload::Decision(DecisionMade { snapshot_seq, record: record.clone() }),
        )?;
        self.participant_mut(participant_id)?
            .decisions
            .insert(decision_index, (seq, record.action));
        Ok(record)
    }

    /// Snapshot then decision for one scheduled point, unless an injected
    /// outage swallows it (logged as an ERROR, never back-filled).
    pub fn decision_point(
        &mut self,
        participant_id: &str,
        decision_index: u64,
    ) -> Result<Option<DecisionRecord>, RuntimeError> {
        if self.setup.injection.outage_at(self.setup.deployment_seed, participant_id, decision_index) {
            self.participant(participant_id)?;
            self.error_event(
                Some(participant_id),
                Some(decision_index),
                "missed_decision",
                "system outage at decision point".into(),
                Vec::new(),
            )?;
            return Ok(None);
        }
        self.assemble_features(participant_id, decision_index)?;
        self.make_decision(participant_id, decision_index).map(Some)
    }

    /// Nightly update: folds every outcome received since the last cycle,
    /// in ledger order, into the posterior and logs the full post-state.
    /// A failed update is logged as an ERROR, its batch is discarded and
    /// the previous state stays active.
    pub fn run_update_cycle(&mut self, participant_id: &str) -> Result<PosteriorState, RuntimeError> {
        let log = self.participant(participant_id)?;
        if log.pending.is_empty() {
            return Ok(log.state.clone());
        }
        let pending = log.pending.clone();
        let state = log.state.clone();
        let mut batch = Vec::with_capacity(pending.len());
        for p in &pending {
            let (_, action) = log.decisions[&p.decision_index];
            let (_, snapshot) = &log.snapshots[&p.decision_index];
            batch.push(Observation { seq: p.seq, snapshot, action, reward: p.reward });
        }
        let seqs: Vec<u64> = pending.iter().map(|p| p.seq).collect();
        let result = self.active_logic().map(|logic| {
            catch_unwind(AssertUnwindSafe(|| {
                logic.update_posterior(&state, &batch, &self.setup.model)
            }))
            .unwrap_or_else(|panic| {
                Err(PolicyError::Numerical(format!("update panicked: {}", panic_message(&panic))))
            })
        })?;
        drop(batch);

        match result {
            Ok(post) => {
                self.append(
                    None,
                    Payload::ModelUpdate(UpdatePayload {
                        participant_id: participant_id.to_owned(),
                        batch_seqs: seqs,
                        pre_state_hash: *state.state_hash(),
                        post_state_hash: *post.state_hash(),
                        post_state: post.canonical_bytes(),
                    }),
                )?;
                let log = self.participant_mut(participant_id)?;
                log.pending.clear();
                log.state = post.clone();
                Ok(post)
            }
            Err(err) => {
                self.error_event(Some(participant_id), None, "update", err.to_string(), seqs)?;
                self.participant_mut(participant_id)?.pending.clear();
                Ok(state)
            }
        }
    }
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_owned()
    }
}

#[cfg(test)]
mod tests;
