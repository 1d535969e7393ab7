use crate::codec::Digest32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionEntry {
    pub version_id: String,
    pub activation_seq: u64,
    pub fingerprint: Digest32,
}

/// Every version ever activated, in activation order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VersionRegistry {
    entries: Vec<VersionEntry>,
}

impl VersionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[VersionEntry] {
        &self.entries
    }

    pub fn contains(&self, version_id: &str) -> bool {
        self.entries.iter().any(|e| e.version_id == version_id)
    }

    pub fn record(&mut self, entry: VersionEntry) -> Result<(), String> {
        if self.contains(&entry.version_id) {
            return Err(format!("version {:?} was already activated", entry.version_id));
        }
        if let Some(last) = self.entries.last() {
            if entry.activation_seq <= last.activation_seq {
                return Err("activation seqs must increase".into());
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn active(&self) -> Option<&VersionEntry> {
        self.entries.last()
    }

    /// Version active at `seq`: the last one activated at or before it.
    pub fn active_at(&self, seq: u64) -> Option<&VersionEntry> {
        self.entries.iter().rev().find(|e| e.activation_seq <= seq)
    }
}
