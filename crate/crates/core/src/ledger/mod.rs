//! Simulated aggregation contract: queue, trust ledger, verification-set
//! bookkeeping, event log, and the off-chain model store.

mod contract;
mod store;
mod trust;

pub use contract::{
    select_verifiers, weighted_average, ContractState, Event, EventKind, VerifierPolicy,
};
pub use store::{Digest, OffchainStore, HASH_ALGORITHM};
pub use trust::{Score, TrustEntry, TrustLedger};
