//! Deployment-reproducibility audit: rebuild every posterior from the
//! ledger, then recompute every decision and update and compare bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::codec::{encode_float, sha256};
use crate::ledger::{
    read_all, verify_chain, ChainStatus, DecisionMade, EventEnvelope, EventType, LedgerError,
    LedgerHeader, Payload,
};
use crate::policy::{
    builtin_logic, decide, derive_decision_seed, init_state, LogicRegistry, Observation, PolicyError,
    PolicyLogic, PosteriorState, FALLBACK_PROBABILITY,
};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("audit error: version {version_id:?} (first used at seq {seq}) has no registered logic")]
    UnknownVersion { version_id: String, seq: u64 },
    #[error("structural audit error at seq {seq}: {reason}")]
    Structural { seq: u64, reason: String },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Exact,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDiff {
    pub seq: u64,
    pub field: String,
    pub logged: String,
    pub recomputed: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivergenceReport {
    pub status: Status,
    pub first_divergent_seq: Option<u64>,
    pub field_diffs: Vec<FieldDiff>,
    /// Events checked, by event type.
    pub counts: BTreeMap<String, u64>,
}

impl Default for DivergenceReport {
    fn default() -> Self {
        Self::from_diffs(Vec::new(), BTreeMap::new())
    }
}

impl DivergenceReport {
    fn from_diffs(mut field_diffs: Vec<FieldDiff>, counts: BTreeMap<String, u64>) -> Self {
        field_diffs.sort_by(|a, b| a.seq.cmp(&b.seq).then_with(|| a.field.cmp(&b.field)));
        let first_divergent_seq = field_diffs.first().map(|d| d.seq);
        let status = if field_diffs.is_empty() { Status::Exact } else { Status::Diverged };
        Self { status, first_divergent_seq, field_diffs, counts }
    }

    pub fn is_exact(&self) -> bool {
        self.status == Status::Exact
    }

    pub fn merge(self, other: DivergenceReport) -> Self {
        let mut diffs = self.field_diffs;
        diffs.extend(other.field_diffs);
        let mut counts = self.counts;
        for (k, v) in other.counts {
            *counts.entry(k).or_default() += v;
        }
        Self::from_diffs(diffs, counts)
    }

    /// Process exit code for this outcome: 0 exact, 1 diverged.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Exact => 0,
            Status::Diverged => 1,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# divergence-report v1\n");
        let status = match self.status {
            Status::Exact => "exact",
            Status::Diverged => "diverged",
        };
        let _ = writeln!(out, "status\t{status}");
        match self.first_divergent_seq {
            Some(s) => {
                let _ = writeln!(out, "first_divergent_seq\t{s}");
            }
            None => out.push_str("first_divergent_seq\t-\n"),
        }
        for (k, v) in &self.counts {
            let _ = writeln!(out, "checked\t{k}\t{v}");
        }
        for d in &self.field_diffs {
            let _ = writeln!(out, "diff\t{}\t{}\t{}\t{}", d.seq, d.field, d.logged, d.recomputed);
        }
        out
    }
}

fn diff(seq: u64, field: &str, logged: impl Into<String>, recomputed: impl Into<String>) -> FieldDiff {
    FieldDiff { seq, field: field.to_owned(), logged: logged.into(), recomputed: recomputed.into() }
}

fn structural(seq: u64, reason: impl Into<String>) -> ReplayError {
    ReplayError::Structural { seq, reason: reason.into() }
}

/// One MODEL_UPDATE as recomputed offline.
#[derive(Debug, Clone)]
pub struct UpdateStep {
    pub seq: u64,
    pub pre_state: PosteriorState,
    pub post_state: Result<PosteriorState, PolicyError>,
}

/// Recomputed posterior timeline of every participant.
#[derive(Debug, Clone)]
pub struct ReconstructedStates {
    pub header: LedgerHeader,
    pub initial: PosteriorState,
    pub updates: BTreeMap<String, Vec<UpdateStep>>,
    /// `(activation seq, version_id)` in ledger order.
    pub versions: Vec<(u64, String)>,
}

impl ReconstructedStates {
    /// Posterior in force for `participant_id` just before `seq`.
    pub fn state_before(&self, participant_id: &str, seq: u64) -> &PosteriorState {
        let mut current = &self.initial;
        for step in self.updates.get(participant_id).into_iter().flatten() {
            if step.seq >= seq {
                break;
            }
            if let Ok(s) = &step.post_state {
                current = s;
            }
        }
        current
    }

    /// Latest recomputed posterior for `participant_id`.
    pub fn final_state(&self, participant_id: &str) -> &PosteriorState {
        self.state_before(participant_id, u64::MAX)
    }

    pub fn version_at(&self, seq: u64) -> Option<&str> {
        self.versions.iter().rev().find(|(s, _)| *s <= seq).map(|(_, v)| v.as_str())
    }
}

fn header_of(events: &[EventEnvelope]) -> Result<&LedgerHeader, ReplayError> {
    match events.first().map(|e| &e.payload) {
        Some(Payload::LedgerHeader(h)) => Ok(h),
        _ => Err(structural(0, "record 0 is not a ledger header")),
    }
}

fn logic_for<'a>(
    registry: &'a LogicRegistry,
    states: &ReconstructedStates,
    seq: u64,
) -> Result<&'a dyn PolicyLogic, ReplayError> {
    let version = states
        .version_at(seq)
        .ok_or_else(|| structural(seq, "event precedes any version activation"))?;
    registry
        .get(version)
        .map(|l| &**l)
        .ok_or_else(|| ReplayError::UnknownVersion { version_id: version.to_owned(), seq })
}

fn decision_at<'a>(
    events: &'a [EventEnvelope],
    seq: u64,
    participant: &str,
) -> Result<&'a DecisionMade, ReplayError> {
    match events.get(seq as usize).map(|e| &e.payload) {
        Some(Payload::Decision(d)) if d.record.participant_id == participant => Ok(d),
        _ => Err(structural(seq, format!("expected a DECISION of {participant}"))),
    }
}

/// Folds every MODEL_UPDATE batch through the logic of the version active
/// at that update, starting from the prior of the logged configuration.
pub fn reconstruct_states(
    events: &[EventEnvelope],
    registry: &LogicRegistry,
) -> Result<ReconstructedStates, ReplayError> {
    let header = header_of(events)?.clone();
    for e in events {
        if !e.version_id.is_empty() && !registry.contains(&e.version_id) {
            return Err(ReplayError::UnknownVersion { version_id: e.version_id.clone(), seq: e.seq });
        }
    }
    let versions: Vec<(u64, String)> = events
        .iter()
        .filter_map(|e| match &e.payload {
            Payload::VersionChange(v) => Some((e.seq, v.version_id.clone())),
            _ => None,
        })
        .collect();
    for (seq, v) in &versions {
        if !registry.contains(v) {
            return Err(ReplayError::UnknownVersion { version_id: v.clone(), seq: *seq });
        }
    }
    let initial = match versions.first() {
        Some((_, v)) => registry.get(v).expect("checked").init_state(&header.model),
        None => init_state(&header.model),
    }
    .map_err(|e| structural(0, format!("logged configuration is invalid: {e}")))?;

    let mut states = ReconstructedStates {
        header,
        initial,
        updates: BTreeMap::new(),
        versions,
    };

    for e in events {
        let Payload::ModelUpdate(u) = &e.payload else { continue };
        let pid = u.participant_id.as_str();
        if u.batch_seqs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(structural(e.seq, "batch_seqs not strictly increasing"));
        }
        let mut batch = Vec::with_capacity(u.batch_seqs.len());
        for &bseq in &u.batch_seqs {
            if bseq >= e.seq {
                return Err(structural(e.seq, format!("batch seq {bseq} is not before the update")));
            }
            let outcome = match events.get(bseq as usize).map(|ev| &ev.payload) {
                Some(Payload::OutcomeObserved(o)) if o.participant_id == pid => o,
                _ => {
                    return Err(structural(
                        e.seq,
                        format!("batch seq {bseq} is not an OUTCOME_OBSERVED of {pid}"),
                    ))
                }
            };
            let decision = decision_at(events, outcome.decision_seq, pid)?;
            if decision.record.decision_index != outcome.decision_index {
                return Err(structural(bseq, "outcome and decision disagree on decision_index"));
            }
            let snapshot = match events.get(decision.snapshot_seq as usize).map(|ev| &ev.payload) {
                Some(Payload::FeatureSnapshot(s)) if s.participant_id == pid => &s.snapshot,
                _ => return Err(structural(outcome.decision_seq, "missing FEATURE_SNAPSHOT")),
            };
            batch.push(Observation {
                seq: bseq,
                snapshot,
                action: decision.record.action,
                reward: outcome.reward,
            });
        }
        let logic = logic_for(registry, &states, e.seq)?;
        let pre = states.state_before(pid, e.seq).clone();
        let post = logic.update_posterior(&pre, &batch, &states.header.model);
        states
            .updates
            .entry(pid.to_owned())
            .or_default()
            .push(UpdateStep { seq: e.seq, pre_state: pre, post_state: post });
    }
    Ok(states)
}

/// Recomputes every DECISION from the reconstructed pre-decision state and
/// the logged snapshot; fallback decisions are checked against the
/// fallback rule instead.
pub fn verify_decisions(
    events: &[EventEnvelope],
    states: &ReconstructedStates,
    registry: &LogicRegistry,
) -> Result<DivergenceReport, ReplayError> {
    let header = &states.header;
    let mut diffs = Vec::new();
    let mut checked = 0u64;
    for e in events {
        let Payload::Decision(d) = &e.payload else { continue };
        checked += 1;
        let r = &d.record;
        let snapshot = match events.get(d.snapshot_seq as usize).map(|ev| &ev.payload) {
            Some(Payload::FeatureSnapshot(s))
                if d.snapshot_seq < e.seq
                    && s.participant_id == r.participant_id
                    && s.decision_index == r.decision_index =>
            {
                &s.snapshot
            }
            _ => return Err(structural(e.seq, "decision has no matching FEATURE_SNAPSHOT")),
        };

        let seed = derive_decision_seed(header.deployment_seed, &r.participant_id, r.decision_index);
        if seed != r.seed {
            diffs.push(diff(e.seq, "seed", r.seed.to_string(), seed.to_string()));
        }
        if r.version_id != e.version_id {
            diffs.push(diff(e.seq, "record.version_id", r.version_id.clone(), e.version_id.clone()));
        }

        let (pi_raw, pi) = if r.fallback {
            if r.fallback_reason.as_deref().is_none_or(str::is_empty) {
                diffs.push(diff(e.seq, "fallback_reason", "-", "non-empty reason"));
            }
            (FALLBACK_PROBABILITY, FALLBACK_PROBABILITY)
        } else {
            if r.fallback_reason.is_some() {
                diffs.push(diff(e.seq, "fallback_reason", "set", "-"));
            }
            let logic = logic_for(registry, states, e.seq)?;
            let state = states.state_before(&r.participant_id, e.seq);
            match logic.action_probability(state, snapshot, &header.model) {
                Ok(p) => (p.raw, p.clipped),
                Err(err) => {
                    diffs.push(diff(e.seq, "pi", encode_float(r.pi), format!("error: {err}")));
                    continue;
                }
            }
        };
        if pi_raw.to_bits() != r.pi_raw.to_bits() {
            diffs.push(diff(e.seq, "pi_raw", encode_float(r.pi_raw), encode_float(pi_raw)));
        }
        if pi.to_bits() != r.pi.to_bits() {
            diffs.push(diff(e.seq, "pi", encode_float(r.pi), encode_float(pi)));
        }
        let action = decide(pi, seed);
        if action != r.action {
            diffs.push(diff(
                e.seq,
                "action",
                r.action.as_u8().to_string(),
                action.as_u8().to_string(),
            ));
        }
    }
    let counts = BTreeMap::from([(EventType::Decision.to_string(), checked)]);
    Ok(DivergenceReport::from_diffs(diffs, counts))
}

/// Compares every logged post-state with its offline recomputation, byte
/// for byte, along with both state hashes.
pub fn verify_updates(
    events: &[EventEnvelope],
    states: &ReconstructedStates,
) -> Result<DivergenceReport, ReplayError> {
    let mut diffs = Vec::new();
    let mut checked = 0u64;
    let mut steps: BTreeMap<u64, &UpdateStep> = BTreeMap::new();
    for s in states.updates.values().flatten() {
        steps.insert(s.seq, s);
    }
    for e in events {
        let Payload::ModelUpdate(u) = &e.payload else { continue };
        checked += 1;
        let step = steps
            .get(&e.seq)
            .ok_or_else(|| structural(e.seq, "update missing from reconstruction"))?;
        let pre_hash = step.pre_state.state_hash();
        if *pre_hash != u.pre_state_hash {
            diffs.push(diff(e.seq, "pre_state_hash", hex::encode(u.pre_state_hash), hex::encode(pre_hash)));
        }
        if sha256(&u.post_state) != u.post_state_hash {
            diffs.push(diff(
                e.seq,
                "post_state_hash",
                hex::encode(u.post_state_hash),
                hex::encode(sha256(&u.post_state)),
            ));
        }
        match &step.post_state {
            Ok(post) => {
                let bytes = post.canonical_bytes();
                if bytes != u.post_state {
                    diffs.push(diff(e.seq, "post_state", hex::encode(&u.post_state), hex::encode(&bytes)));
                }
            }
            Err(err) => {
                diffs.push(diff(e.seq, "post_state", hex::encode(&u.post_state), format!("error: {err}")));
            }
        }
    }
    let counts = BTreeMap::from([(EventType::ModelUpdate.to_string(), checked)]);
    Ok(DivergenceReport::from_diffs(diffs, counts))
}

/// Every record must carry the version active at its seq.
pub fn verify_versions(events: &[EventEnvelope], states: &ReconstructedStates) -> DivergenceReport {
    let mut diffs = Vec::new();
    for e in events {
        let expected = states.version_at(e.seq).unwrap_or("");
        if e.version_id != expected {
            diffs.push(diff(e.seq, "version_id", e.version_id.clone(), expected.to_owned()));
        }
    }
    let counts = BTreeMap::from([("records".to_owned(), events.len() as u64)]);
    DivergenceReport::from_diffs(diffs, counts)
}

/// Registry built from the ledger's own VERSION_CHANGE records, resolving
/// each recorded logic name among the built-in logics. A fingerprint that
/// does not match the built-in logic of that name is an audit error.
pub fn registry_from_ledger(events: &[EventEnvelope]) -> Result<LogicRegistry, ReplayError> {
    let mut registry = LogicRegistry::new();
    for e in events {
        let Payload::VersionChange(v) = &e.payload else { continue };
        let logic = builtin_logic(&v.logic).ok_or_else(|| ReplayError::UnknownVersion {
            version_id: v.version_id.clone(),
            seq: e.seq,
        })?;
        if logic.fingerprint() != v.fingerprint {
            return Err(structural(
                e.seq,
                format!("logic {:?} of version {:?} has a different fingerprint", v.logic, v.version_id),
            ));
        }
        registry.insert(v.version_id.clone(), logic);
    }
    Ok(registry)
}

/// Full audit of a ledger's bytes: chain, reconstruction, decisions,
/// updates and version stamps. A broken chain is reported as a divergence
/// at the first bad record.
pub fn audit(bytes: &[u8], registry: &LogicRegistry) -> Result<DivergenceReport, ReplayError> {
    if let ChainStatus::Broken { first_bad_seq, reason } = verify_chain(bytes) {
        let report = DivergenceReport::from_diffs(
            vec![diff(first_bad_seq, "chain", reason, "valid hash-chained record")],
            BTreeMap::new(),
        );
        return Ok(report);
    }
    let events = read_all(bytes)?;
    let states = reconstruct_states(&events, registry)?;
    let decisions = verify_decisions(&events, &states, registry)?;
    let updates = verify_updates(&events, &states)?;
    Ok(verify_versions(&events, &states).merge(decisions).merge(updates))
}
