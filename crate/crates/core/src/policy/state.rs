use super::linalg::Cholesky;
use super::PolicyError;
use crate::codec::{sha256, Digest32};

/// Sentinel for "no update yet" in the canonical encoding. Ledger sequence
/// numbers never reach it.
const NO_SEQ: u64 = u64::MAX;

/// Gaussian posterior over the stacked `[baseline; treatment]` weights,
/// stored in precision form so that updates are plain additions.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    mean: Vec<f64>,
    precision: Vec<f64>,
    update_count: u64,
    last_update_seq: Option<u64>,
    state_hash: Digest32,
}

impl PosteriorState {
    /// Builds a state from raw parts and stamps its hash.
    ///
    /// Only shapes are checked; a state whose precision matrix is not
    /// positive definite is representable so that corrupted inputs can be
    /// exercised (the policy reports them as numerical errors).
    pub fn from_parts(
        mean: Vec<f64>,
        precision: Vec<f64>,
        update_count: u64,
        last_update_seq: Option<u64>,
    ) -> Result<Self, PolicyError> {
        let d = mean.len();
        if d == 0 || precision.len() != d * d {
            return Err(PolicyError::Config(format!(
                "precision has {} entries, expected {}",
                precision.len(),
                d * d
            )));
        }
        if last_update_seq == Some(NO_SEQ) {
            return Err(PolicyError::Config("last_update_seq out of range".into()));
        }
        let mut state = Self {
            mean,
            precision,
            update_count,
            last_update_seq,
            state_hash: [0; 32],
        };
        state.state_hash = sha256(&state.canonical_bytes());
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d×d` precision matrix.
    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn precision_at(&self, row: usize, col: usize) -> f64 {
        self.precision[row * self.dim() + col]
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn last_update_seq(&self) -> Option<u64> {
        self.last_update_seq
    }

    pub fn state_hash(&self) -> &Digest32 {
        &self.state_hash
    }

    pub fn cholesky(&self) -> Result<Cholesky, PolicyError> {
        Cholesky::factor(&self.precision, self.dim()).map_err(|e| {
            PolicyError::Numerical(format!(
                "precision matrix is not positive definite (pivot {} = {})",
                e.pivot, e.value
            ))
        })
    }

    /// Checks the structural invariants: exact symmetry, a successful
    /// Cholesky factorization, and a hash that matches the contents.
    pub fn validate(&self) -> Result<(), PolicyError> {
        let d = self.dim();
        for i in 0..d {
            for j in (i + 1)..d {
                if self.precision[i * d + j].to_bits() != self.precision[j * d + i].to_bits() {
                    return Err(PolicyError::Numerical(format!(
                        "precision not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        self.cholesky()?;
        if sha256(&self.canonical_bytes()) != self.state_hash {
            return Err(PolicyError::Numerical("state_hash does not match contents".into()));
        }
        Ok(())
    }

    /// Canonical encoding: mean entries, precision entries row-major (each
    /// as 8 big-endian IEEE-754 bytes), then `update_count` and
    /// `last_update_seq` as big-endian `u64` (`u64::MAX` encodes "none").
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(8 * (d + d * d + 2));
        for x in self.mean.iter().chain(&self.precision) {
            out.extend_from_slice(&x.to_be_bytes());
        }
        out.extend_from_slice(&self.update_count.to_be_bytes());
        out.extend_from_slice(&self.last_update_seq.unwrap_or(NO_SEQ).to_be_bytes());
        out
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        if !bytes.len().is_multiple_of(8) {
            return Err(PolicyError::Decode(format!(
                "state encoding length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        let words = bytes.len() / 8;
        // words = d + d² + 2
        let d = (1..=words).find(|d| d + d * d + 2 >= words).unwrap_or(0);
        if d == 0 || d + d * d + 2 != words {
            return Err(PolicyError::Decode(format!(
                "state encoding length {} does not match any dimension",
                bytes.len()
            )));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
        let mean = (0..d).map(|i| f64::from_be_bytes(word(i))).collect();
        let precision = (d..d + d * d).map(|i| f64::from_be_bytes(word(i))).collect();
        let update_count = u64::from_be_bytes(word(d + d * d));
        let last = u64::from_be_bytes(word(d + d * d + 1));
        let last_update_seq = (last != NO_SEQ).then_some(last);
        Self::from_parts(mean, precision, update_count, last_update_seq)
    }
}

pub fn canonical_serialize(state: &PosteriorState) -> Vec<u8> {
    state.canonical_bytes()
}

pub fn canonical_deserialize(bytes: &[u8]) -> Result<PosteriorState, PolicyError> {
    PosteriorState::from_canonical_bytes(bytes)
}
