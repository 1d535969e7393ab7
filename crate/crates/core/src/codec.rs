//! Bit-exact text encodings shared by the ledger and the state codecs.
//!
//! Every float that crosses a process boundary is written as the 16-digit
//! lowercase hex form of its big-endian IEEE-754 bit pattern, so decoding
//! reproduces the exact bits (negative zero and NaN payloads included).

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed hex float {input:?}: {reason}")]
pub struct HexFloatError {
    pub input: String,
    pub reason: &'static str,
}

/// Encodes `x` as its big-endian bit pattern in lowercase hex.
pub fn encode_float(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

/// Inverse of [`encode_float`]. Only the canonical form is accepted:
/// exactly 16 lowercase hex digits.
pub fn decode_float(hex: &str) -> Result<f64, HexFloatError> {
    if hex.len() != 16 {
        return Err(HexFloatError {
            input: hex.to_owned(),
            reason: "expected 16 hex digits",
        });
    }
    if !hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(HexFloatError {
            input: hex.to_owned(),
            reason: "expected lowercase hex digits",
        });
    }
    let bits = u64::from_str_radix(hex, 16).map_err(|_| HexFloatError {
        input: hex.to_owned(),
        reason: "not a hex number",
    })?;
    Ok(f64::from_bits(bits))
}

pub type Digest32 = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Digest32 {
    Sha256::digest(bytes).into()
}

pub fn sha256_concat(parts: &[&[u8]]) -> Digest32 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Serde adapter: `f64` as a hex float string.
pub mod hex_f64 {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_float(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        super::decode_float(&s).map_err(D::Error::custom)
    }
}

/// Serde adapter: `Vec<f64>` as a list of hex float strings.
pub mod hex_f64_vec {
    use serde::{de::Error as _, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&super::encode_float(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| super::decode_float(s).map_err(D::Error::custom))
            .collect()
    }
}

/// Serde adapter: 32-byte digests as 64 lowercase hex digits.
pub mod hex_digest {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(D::Error::custom("digest must be 64 lowercase hex digits"));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(D::Error::custom)?;
        Ok(out)
    }
}

/// Serde adapter: arbitrary bytes as lowercase hex.
pub mod hex_bytes {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(D::Error::custom("hex must be lowercase"));
        }
        hex::decode(&s).map_err(D::Error::custom)
    }
}
