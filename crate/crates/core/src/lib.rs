//! Deterministic simulator for blockchain-coordinated federated learning
//! under backdoor attack.
//!
//! A simulated smart contract queues local models, keeps a per-client trust
//! score, and aggregates the queue weighted by trust and data size. Verifiers
//! score clients from their ultimate-layer gradients alone. A coverage planner
//! answers how many verifiers, each checking how many clients, are needed so
//! every client gets checked.
//!
//! Modules, bottom-up:
//!
//! - [`nn`]: MLP classifier, SGD, ultimate-gradient extraction
//! - [`data`]: synthetic data, non-IID partitioning, backdoor triggers
//! - [`client`]: benign and compromised local rounds (blackbox, PGD, PGD + model replacement)
//! - [`ledger`]: contract state, trust ledger, content-addressed off-chain store
//! - [`defense`]: two-filter verification and bad-verifier models
//! - [`planner`]: closed-form verifier coverage and its Monte Carlo oracle
//! - [`harness`]: configuration, round loop, metrics, result files

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod client;
pub mod data;
pub mod defense;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod nn;
pub mod planner;
pub mod seed;

pub use error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
