//! Content-addressed off-chain blob store.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

/// Name of the digest function; echoed into run summaries so results from
/// different builds are comparable.
pub const HASH_ALGORITHM: &str = "sha256";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let raw = hex::decode(s).map_err(|e| Error::domain(format!("bad digest {s:?}: {e}")))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| Error::domain(format!("digest {s:?} is not 32 bytes")))?;
        Ok(Self(arr))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Blobs keyed by the digest of their bytes. Reads re-hash and refuse
/// anything that no longer matches its key.
#[derive(Debug, Default, Clone)]
pub struct OffchainStore {
    blobs: HashMap<Digest, Vec<u8>>,
}

impl OffchainStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, bytes: Vec<u8>) -> Digest {
        let d = Digest::of(&bytes);
        self.blobs.insert(d, bytes);
        d
    }

    pub fn fetch(&self, digest: &Digest) -> Result<&[u8]> {
        let bytes = self
            .blobs
            .get(digest)
            .ok_or_else(|| Error::MissingBlob(digest.to_hex()))?;
        let actual = Digest::of(bytes);
        if actual != *digest {
            return Err(Error::Integrity {
                expected: digest.to_hex(),
                actual: actual.to_hex(),
            });
        }
        Ok(bytes)
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.blobs.contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Replace the bytes behind a key without re-keying them, as a
    /// dishonest host would.
    pub fn tamper(&mut self, digest: &Digest, bytes: Vec<u8>) {
        self.blobs.insert(*digest, bytes);
    }
}
