//! Append-only, hash-chained event ledger.
//!
//! On disk a ledger is newline-delimited canonical JSON: keys sorted, no
//! insignificant whitespace, base-10 integers, floats as hex bit patterns.
//! Record `n` has `seq = n`, and its `hash` is
//! `SHA-256(prev_hash ‖ record-without-hash)` with a zero genesis `prev_hash`.
//! Record 0 is always the [`LedgerHeader`].

mod event;
mod store;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use thiserror::Error;

pub use crate::codec::{decode_float, encode_float};
use crate::codec::Digest32;
pub use event::{
    config_digest, AlertEvent, DataIngested, DecisionMade, EnvironmentProfile, ErrorEvent,
    EventDraft, EventEnvelope, EventType, LedgerHeader, OutcomeObserved, Payload, SnapshotTaken,
    UpdatePayload, VersionChange, FORMAT_VERSION,
};
pub use store::{FileStore, MemoryStore, Store};

pub const GENESIS_HASH: Digest32 = [0; 32];

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("isolation error: {0}")]
    Isolation(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("decode error at seq {seq}: {reason}")]
    Decode { seq: u64, reason: String },
    #[error("invalid event: {0}")]
    Invalid(String),
}

struct Writer {
    store: Box<dyn Store>,
    next_seq: u64,
    last_hash: Digest32,
    active_version: String,
}

/// Single-writer ledger. `append` takes `&self`; concurrent callers are
/// serialized in arrival order.
pub struct Ledger {
    stream_id: String,
    profile: EnvironmentProfile,
    header: LedgerHeader,
    writer: Mutex<Writer>,
}

impl Ledger {
    /// Starts a new ledger in `store` by writing the header record.
    pub fn create(
        store: Box<dyn Store>,
        stream_id: impl Into<String>,
        profile: EnvironmentProfile,
        header: LedgerHeader,
        backend_ts: i64,
    ) -> Result<Self, LedgerError> {
        if !store.contents()?.is_empty() {
            return Err(LedgerError::Invalid("store already holds records".into()));
        }
        let ledger = Self {
            stream_id: stream_id.into(),
            profile,
            header: header.clone(),
            writer: Mutex::new(Writer {
                store,
                next_seq: 0,
                last_hash: GENESIS_HASH,
                active_version: String::new(),
            }),
        };
        ledger.append_unchecked(None, backend_ts, Payload::LedgerHeader(header))?;
        Ok(ledger)
    }

    pub fn in_memory(
        stream_id: impl Into<String>,
        profile: EnvironmentProfile,
        header: LedgerHeader,
        backend_ts: i64,
    ) -> Result<Self, LedgerError> {
        Self::create(Box::new(MemoryStore::new()), stream_id, profile, header, backend_ts)
    }

    /// Resumes appending to a store that already holds a valid ledger.
    pub fn resume(store: Box<dyn Store>) -> Result<Self, LedgerError> {
        let bytes = store.contents()?;
        if let ChainStatus::Broken { first_bad_seq, reason } = verify_chain(&bytes) {
            return Err(LedgerError::Decode { seq: first_bad_seq, reason });
        }
        let events = read_all(&bytes)?;
        let first = events
            .first()
            .ok_or_else(|| LedgerError::Invalid("empty ledger".into()))?;
        let header = match &first.payload {
            Payload::LedgerHeader(h) => h.clone(),
            _ => return Err(LedgerError::Invalid("record 0 is not a header".into())),
        };
        let last = events.last().expect("non-empty");
        Ok(Self {
            stream_id: first.stream_id.clone(),
            profile: first.environment_profile,
            header,
            writer: Mutex::new(Writer {
                store,
                next_seq: last.seq + 1,
                last_hash: last.hash,
                active_version: last.version_id.clone(),
            }),
        })
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn profile(&self) -> EnvironmentProfile {
        self.profile
    }

    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }

    pub fn next_seq(&self) -> u64 {
        self.writer.lock().expect("ledger lock").next_seq
    }

    pub fn active_version(&self) -> String {
        self.writer.lock().expect("ledger lock").active_version.clone()
    }

    /// A draft pre-filled with this ledger's stream and profile.
    pub fn draft(&self, device_ts: Option<i64>, backend_ts: i64, payload: Payload) -> EventDraft {
        EventDraft {
            stream_id: self.stream_id.clone(),
            environment_profile: self.profile,
            device_ts,
            backend_ts,
            payload,
        }
    }

    /// Appends one record. The record is in the store when this returns.
    pub fn append(&self, draft: EventDraft) -> Result<EventEnvelope, LedgerError> {
        if draft.environment_profile != self.profile {
            return Err(LedgerError::Isolation(format!(
                "{} event offered to a {} ledger",
                draft.environment_profile, self.profile
            )));
        }
        if draft.stream_id != self.stream_id {
            return Err(LedgerError::Isolation(format!(
                "stream {:?} offered to ledger of stream {:?}",
                draft.stream_id, self.stream_id
            )));
        }
        if matches!(draft.payload, Payload::LedgerHeader(_)) {
            return Err(LedgerError::Invalid("only record 0 may be a header".into()));
        }
        self.append_unchecked(draft.device_ts, draft.backend_ts, draft.payload)
    }

    fn append_unchecked(
        &self,
        device_ts: Option<i64>,
        backend_ts: i64,
        payload: Payload,
    ) -> Result<EventEnvelope, LedgerError> {
        let mut w = self.writer.lock().expect("ledger lock");
        let version_id = match &payload {
            Payload::VersionChange(v) => v.version_id.clone(),
            _ => w.active_version.clone(),
        };
        let mut envelope = EventEnvelope {
            seq: w.next_seq,
            stream_id: self.stream_id.clone(),
            environment_profile: self.profile,
            device_ts,
            backend_ts,
            version_id,
            payload,
            prev_hash: w.last_hash,
            hash: [0; 32],
        };
        envelope.hash = envelope.compute_hash();
        let mut line = envelope.canonical_line();
        line.push(b'\n');
        w.store.append(&line)?;
        w.next_seq += 1;
        w.last_hash = envelope.hash;
        w.active_version.clone_from(&envelope.version_id);
        Ok(envelope)
    }

    /// Everything written so far.
    pub fn bytes(&self) -> Result<Vec<u8>, LedgerError> {
        Ok(self.writer.lock().expect("ledger lock").store.contents()?)
    }
}

/// Splits ledger bytes into complete records. A trailing fragment without a
/// newline (a write in progress) is not a record yet.
fn record_lines(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let complete = match bytes.iter().rposition(|b| *b == b'\n') {
        Some(last) => &bytes[..=last],
        None => &bytes[..0],
    };
    complete
        .split(|b| *b == b'\n')
        .take(complete.iter().filter(|b| **b == b'\n').count())
}

/// Decodes one record line. Anything that does not re-encode to exactly the
/// same bytes is rejected, so no two distinct lines decode to the same event.
pub fn decode_record(line: &[u8], position: u64) -> Result<EventEnvelope, LedgerError> {
    let envelope: EventEnvelope =
        serde_json::from_slice(line).map_err(|e| LedgerError::Decode {
            seq: position,
            reason: e.to_string(),
        })?;
    if envelope.canonical_line() != line {
        return Err(LedgerError::Decode {
            seq: position,
            reason: "record is not in canonical form".into(),
        });
    }
    Ok(envelope)
}

/// Records in seq order starting at `from_seq`, optionally restricted to
/// the given event types.
pub fn iterate<'a>(
    bytes: &'a [u8],
    from_seq: u64,
    filter: Option<&'a [EventType]>,
) -> impl Iterator<Item = Result<EventEnvelope, LedgerError>> + 'a {
    record_lines(bytes)
        .enumerate()
        .skip(usize::try_from(from_seq).unwrap_or(usize::MAX))
        .map(|(i, line)| decode_record(line, i as u64))
        .filter(move |r| match (r, filter) {
            (Ok(e), Some(types)) => types.contains(&e.event_type()),
            _ => true,
        })
}

pub fn read_all(bytes: &[u8]) -> Result<Vec<EventEnvelope>, LedgerError> {
    iterate(bytes, 0, None).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainStatus {
    Ok { records: u64 },
    Broken { first_bad_seq: u64, reason: String },
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok { .. })
    }
}

/// Recomputes every hash and checks seq continuity, the genesis rule, the
/// header position, and profile/stream purity. Reports the smallest
/// offending record position.
pub fn verify_chain(bytes: &[u8]) -> ChainStatus {
    let complete_len = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
    let mut prev_hash = GENESIS_HASH;
    let mut identity: Option<(String, EnvironmentProfile)> = None;
    let mut count = 0u64;
    for (i, line) in record_lines(bytes).enumerate() {
        let pos = i as u64;
        let broken = |reason: String| ChainStatus::Broken { first_bad_seq: pos, reason };
        let envelope = match decode_record(line, pos) {
            Ok(e) => e,
            Err(e) => return broken(e.to_string()),
        };
        if envelope.seq != pos {
            return broken(format!("seq {} at position {pos}", envelope.seq));
        }
        if envelope.prev_hash != prev_hash {
            return broken("prev_hash does not match the previous record".into());
        }
        if envelope.compute_hash() != envelope.hash {
            return broken("hash does not match record contents".into());
        }
        let is_header = envelope.event_type() == EventType::LedgerHeader;
        if is_header != (pos == 0) {
            return broken("the header must be exactly record 0".into());
        }
        match &identity {
            None => identity = Some((envelope.stream_id.clone(), envelope.environment_profile)),
            Some((stream, profile)) => {
                if *stream != envelope.stream_id || *profile != envelope.environment_profile {
                    return broken("stream or environment profile differs from the header".into());
                }
            }
        }
        prev_hash = envelope.hash;
        count += 1;
    }
    if complete_len != bytes.len() {
        return ChainStatus::Broken {
            first_bad_seq: count,
            reason: "trailing bytes after the last record".into(),
        };
    }
    ChainStatus::Ok { records: count }
}

pub fn verify_chain_file(path: impl AsRef<Path>) -> Result<ChainStatus, LedgerError> {
    Ok(verify_chain(&std::fs::read(path)?))
}

/// Parses and returns the header record.
pub fn read_header(bytes: &[u8]) -> Result<LedgerHeader, LedgerError> {
    match iterate(bytes, 0, None).next() {
        Some(Ok(EventEnvelope { payload: Payload::LedgerHeader(h), .. })) => Ok(h),
        Some(Ok(_)) => Err(LedgerError::Invalid("record 0 is not a header".into())),
        Some(Err(e)) => Err(e),
        None => Err(LedgerError::Invalid("empty ledger".into())),
    }
}

/// Distinct event types present, for summaries.
pub fn event_types(events: &[EventEnvelope]) -> BTreeSet<EventType> {
    events.iter().map(EventEnvelope::event_type).collect()
}
