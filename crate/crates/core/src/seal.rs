//! Sealed envelopes standing in for encryption under the analyzer's key.
//!
//! Capabilities are split by type: a [`Sealer`] can only seal, an [`Opener`]
//! can only be built from the analyzer's key pair. The shuffler is handed a
//! `Sealer` (it must seal dummy values) and never an `Opener`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies the analyzer key pair a payload was sealed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyId(pub u64);

/// Opaque sealed value list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedPayload {
    pub scheme: String,
    pub key: KeyId,
    pub bytes: Vec<u8>,
}

/// A pluggable sealing scheme.
pub trait SealingScheme: Send + Sync {
    fn tag(&self) -> &'static str;
    fn seal_bytes(&self, key: KeyId, values: &[f64]) -> Vec<u8>;
    fn open_bytes(&self, key: KeyId, bytes: &[u8]) -> Result<Vec<f64>>;
}

/// Tagged pass-through envelope: little-endian `f64`s, no confidentiality.
#[derive(Debug, Default, Clone, Copy)]
pub struct PassThrough;

impl SealingScheme for PassThrough {
    fn tag(&self) -> &'static str {
        "passthrough-v1"
    }

    fn seal_bytes(&self, _key: KeyId, values: &[f64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(values.len() * 8);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn open_bytes(&self, _key: KeyId, bytes: &[u8]) -> Result<Vec<f64>> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::ProtocolViolation(format!(
                "payload length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

/// Public half: seals values for the analyzer.
#[derive(Clone)]
pub struct Sealer {
    key: KeyId,
    scheme: Arc<dyn SealingScheme>,
}

impl fmt::Debug for Sealer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sealer")
            .field("key", &self.key)
            .field("scheme", &self.scheme.tag())
            .finish()
    }
}

impl Sealer {
    pub fn key(&self) -> KeyId {
        self.key
    }

    pub fn seal(&self, values: &[f64]) -> SealedPayload {
        SealedPayload {
            scheme: self.scheme.tag().to_string(),
            key: self.key,
            bytes: self.scheme.seal_bytes(self.key, values),
        }
    }
}

/// Secret half, held by the analyzer only.
#[derive(Clone)]
pub struct Opener {
    key: KeyId,
    scheme: Arc<dyn SealingScheme>,
}

impl fmt::Debug for Opener {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Opener")
            .field("key", &self.key)
            .field("scheme", &self.scheme.tag())
            .finish()
    }
}

impl Opener {
    pub fn key(&self) -> KeyId {
        self.key
    }

    pub fn unseal(&self, payload: &SealedPayload) -> Result<Vec<f64>> {
        if payload.key != self.key {
            return Err(Error::Authorization(format!(
                "payload sealed for key {} cannot be opened with key {}",
                payload.key.0, self.key.0
            )));
        }
        if payload.scheme != self.scheme.tag() {
            return Err(Error::Authorization(format!(
                "payload scheme `{}` does not match `{}`",
                payload.scheme,
                self.scheme.tag()
            )));
        }
        self.scheme.open_bytes(self.key, &payload.bytes)
    }
}

/// Generates the analyzer's key pair under the given scheme.
pub fn keypair_with(id: u64, scheme: Arc<dyn SealingScheme>) -> (Sealer, Opener) {
    let key = KeyId(id);
    (
        Sealer {
            key,
            scheme: scheme.clone(),
        },
        Opener { key, scheme },
    )
}

/// Key pair under the default pass-through scheme.
pub fn keypair(id: u64) -> (Sealer, Opener) {
    keypair_with(id, Arc::new(PassThrough))
}
