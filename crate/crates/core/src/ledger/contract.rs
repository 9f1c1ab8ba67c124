use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::store::{Digest, OffchainStore};
use super::trust::TrustLedger;
use crate::client::Submission;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::seed;
use crate::ClientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ModelSubmitted,
    QueueFull,
    GlobalUpdated,
    VerificationRequested,
    ScoresReceived,
    VerifierShortfall,
    DegenerateAggregation,
}

/// One contract event. Exported one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub round: u64,
    pub kind: EventKind,
    pub client: Option<ClientId>,
    pub digest: Option<Digest>,
    pub verifier: Option<ClientId>,
    pub score: Option<f64>,
}

impl Event {
    fn new(round: u64, kind: EventKind) -> Self {
        Self {
            round,
            kind,
            client: None,
            digest: None,
            verifier: None,
            score: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierPolicy {
    /// Anyone in the pool may verify.
    Open,
    /// Client-as-a-verifier: only clients with trust strictly above 1/2.
    Caav,
}

/// On-chain state of the aggregation contract.
#[derive(Debug, Clone)]
pub struct ContractState {
    capacity: usize,
    queue: Vec<Submission>,
    global_digest: Digest,
    verification_set: Vec<ClientId>,
    round: u64,
    events: Vec<Event>,
}

impl ContractState {
    /// Publish `initial` to the store and start with an empty queue of
    /// capacity `queue_capacity` (K).
    pub fn new(initial: &ModelParams, queue_capacity: usize, store: &mut OffchainStore) -> Result<Self> {
        if queue_capacity == 0 {
            return Err(Error::domain("queue capacity must be positive"));
        }
        let global_digest = store.put(initial.canonical_bytes());
        Ok(Self {
            capacity: queue_capacity,
            queue: Vec::with_capacity(queue_capacity),
            global_digest,
            verification_set: Vec::new(),
            round: 0,
            events: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn queue(&self) -> &[Submission] {
        &self.queue
    }

    pub fn is_full(&self) -> bool {
        self.queue.len() == self.capacity
    }

    pub fn queued_clients(&self) -> Vec<ClientId> {
        self.queue.iter().map(|s| s.client).collect()
    }

    pub fn global_digest(&self) -> Digest {
        self.global_digest
    }

    /// Fetch and decode the current global model, checking its digest.
    pub fn global_model(&self, store: &OffchainStore) -> Result<ModelParams> {
        ModelParams::from_canonical_bytes(store.fetch(&self.global_digest)?)
    }

    pub fn verification_set(&self) -> &[ClientId] {
        &self.verification_set
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn emit(&mut self, e: Event) {
        self.events.push(e);
    }

    /// Accept a submission whose model bytes are already in the store.
    ///
    /// Rejected, with no event and no state change, if the stored bytes do
    /// not hash to the claimed digest or do not encode the submitted model.
    pub fn submit(&mut self, store: &OffchainStore, sub: Submission) -> Result<()> {
        if self.is_full() {
            return Err(Error::domain(format!(
                "aggregation queue is full ({} models)",
                self.capacity
            )));
        }
        let stored = store.fetch(&sub.model_digest)?;
        let own = Digest::of(&sub.model.canonical_bytes());
        if own != sub.model_digest || stored != sub.model.canonical_bytes().as_slice() {
            return Err(Error::Integrity {
                expected: sub.model_digest.to_hex(),
                actual: own.to_hex(),
            });
        }
        let mut e = Event::new(self.round, EventKind::ModelSubmitted);
        e.client = Some(sub.client);
        e.digest = Some(sub.model_digest);
        self.emit(e);
        self.queue.push(sub);
        if self.is_full() {
            self.emit(Event::new(self.round, EventKind::QueueFull));
        }
        Ok(())
    }

    /// Trust- and size-weighted average of the full queue.
    pub fn aggregate(&mut self, ledger: &TrustLedger, store: &mut OffchainStore) -> Result<ModelParams> {
        let weights = self
            .queue
            .iter()
            .map(|s| Ok(ledger.trust(s.client)? * s.data_size as f64))
            .collect::<Result<Vec<f64>>>()?;
        self.aggregate_with(&weights, store)
    }

    /// Plain FedAvg over the full queue: every trust forced to 1.
    pub fn fedavg_aggregate(&mut self, store: &mut OffchainStore) -> Result<ModelParams> {
        let weights: Vec<f64> = self.queue.iter().map(|s| 1.0 * s.data_size as f64).collect();
        self.aggregate_with(&weights, store)
    }

    fn aggregate_with(&mut self, weights: &[f64], store: &mut OffchainStore) -> Result<ModelParams> {
        if !self.is_full() {
            return Err(Error::domain(format!(
                "aggregation needs a full queue ({} of {})",
                self.queue.len(),
                self.capacity
            )));
        }
        let models: Vec<&ModelParams> = self.queue.iter().map(|s| &s.model).collect();
        let result = weighted_average(&models, weights);
        self.queue.clear();
        self.verification_set.clear();
        let round = self.round;
        self.round += 1;
        match result {
            Ok(global) => {
                let digest = store.put(global.canonical_bytes());
                self.global_digest = digest;
                let mut e = Event::new(round, EventKind::GlobalUpdated);
                e.digest = Some(digest);
                self.emit(e);
                Ok(global)
            }
            Err(err) => {
                let mut e = Event::new(round, EventKind::DegenerateAggregation);
                e.digest = Some(self.global_digest);
                self.emit(e);
                Err(err)
            }
        }
    }

    /// Choose the clients that need verification this round.
    ///
    /// When `m` equals the queue capacity the set is exactly the queued
    /// submitters; otherwise `m` clients are drawn uniformly from `population`.
    pub fn select_verification_set(&mut self, population: &[ClientId], m: usize, seed: u64) -> Result<Vec<ClientId>> {
        if m > population.len() {
            return Err(Error::domain(format!(
                "verification set of {m} exceeds population of {}",
                population.len()
            )));
        }
        let mut set = if m == self.capacity && self.is_full() {
            self.queued_clients()
        } else {
            let mut rng = seed::rng(seed);
            index::sample(&mut rng, population.len(), m)
                .into_iter()
                .map(|i| population[i])
                .collect()
        };
        set.sort_unstable();
        for c in &set {
            let mut e = Event::new(self.round, EventKind::VerificationRequested);
            e.client = Some(*c);
            self.emit(e);
        }
        self.verification_set = set.clone();
        Ok(set)
    }

    /// Draw `v` verifiers from `pool` under `policy`. With too few eligible
    /// candidates every eligible one is returned and a shortfall is logged.
    pub fn select_verifiers(
        &mut self,
        ledger: &TrustLedger,
        pool: &[ClientId],
        v: usize,
        policy: VerifierPolicy,
        seed: u64,
    ) -> Vec<ClientId> {
        let chosen = select_verifiers(ledger, pool, v, policy, seed);
        if chosen.len() < v {
            let mut e = Event::new(self.round, EventKind::VerifierShortfall);
            e.score = Some(chosen.len() as f64);
            self.emit(e);
        }
        chosen
    }

    /// Log one verifier's scores as received.
    pub fn record_scores(&mut self, verifier: ClientId, scores: impl IntoIterator<Item = (ClientId, f64)>) {
        for (client, s) in scores {
            let mut e = Event::new(self.round, EventKind::ScoresReceived);
            e.verifier = Some(verifier);
            e.client = Some(client);
            e.score = Some(s);
            self.emit(e);
        }
    }

    /// Write the event log as JSON lines.
    pub fn export_events(&self, mut out: impl Write) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `Σ wᵢ·modelᵢ / Σ wᵢ`. Weights are normalised before use.
pub fn weighted_average(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::shape("need one weight per model"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain("aggregation weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateAggregation);
    }
    let mut out = models[0].zeros_like();
    for (m, w) in models.iter().zip(weights) {
        if *w > 0.0 {
            out.add_scaled(w / total, m)?;
        }
    }
    if !out.is_finite() {
        return Err(Error::numerical("aggregation"));
    }
    Ok(out)
}

pub fn select_verifiers(
    ledger: &TrustLedger,
    pool: &[ClientId],
    v: usize,
    policy: VerifierPolicy,
    seed: u64,
) -> Vec<ClientId> {
    let mut eligible: Vec<ClientId> = match policy {
        VerifierPolicy::Open => pool.to_vec(),
        VerifierPolicy::Caav => pool
            .iter()
            .copied()
            .filter(|c| ledger.trust(*c).is_ok_and(|s| s > 0.5))
            .collect(),
    };
    eligible.sort_unstable();
    eligible.dedup();
    if eligible.len() <= v {
        return eligible;
    }
    let mut rng = seed::rng(seed);
    let mut picked: Vec<ClientId> = index::sample(&mut rng, eligible.len(), v)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}
