use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClientId;

/// A verifier's judgement of one client in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Score {
    Malicious,
    Unsure,
    Benign,
}

impl Score {
    pub const ALL: [Score; 3] = [Score::Malicious, Score::Unsure, Score::Benign];

    pub fn value(self) -> f64 {
        match self {
            Score::Malicious => 0.0,
            Score::Unsure => 0.5,
            Score::Benign => 1.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        match v {
            x if x == 0.0 => Ok(Score::Malicious),
            x if x == 0.5 => Ok(Score::Unsure),
            x if x == 1.0 => Ok(Score::Benign),
            _ => Err(Error::domain(format!("score must be 0, 0.5 or 1, got {v}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustEntry {
    pub score: f64,
    pub count: u64,
}

impl Default for TrustEntry {
    fn default() -> Self {
        Self {
            score: 1.0,
            count: 0,
        }
    }
}

/// Long-term trust per client: the running mean of every verification score
/// it has received, starting at 1 before the first score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustLedger {
    entries: BTreeMap<ClientId, TrustEntry>,
}

impl TrustLedger {
    pub fn new(clients: impl IntoIterator<Item = ClientId>) -> Self {
        Self {
            entries: clients
                .into_iter()
                .map(|c| (c, TrustEntry::default()))
                .collect(),
        }
    }

    pub fn update(&mut self, client: ClientId, s: Score) -> Result<()> {
        let e = self
            .entries
            .get_mut(&client)
            .ok_or(Error::UnknownClient(client))?;
        e.count += 1;
        let t = e.count as f64;
        e.score = ((t - 1.0) * e.score + s.value()) / t;
        Ok(())
    }

    pub fn trust(&self, client: ClientId) -> Result<f64> {
        self.entries
            .get(&client)
            .map(|e| e.score)
            .ok_or(Error::UnknownClient(client))
    }

    pub fn entry(&self, client: ClientId) -> Option<&TrustEntry> {
        self.entries.get(&client)
    }

    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClientId, &TrustEntry)> + '_ {
        self.entries.iter().map(|(c, e)| (*c, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn snapshot(&self) -> BTreeMap<ClientId, f64> {
        self.entries.iter().map(|(c, e)| (*c, e.score)).collect()
    }
}
