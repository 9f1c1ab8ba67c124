use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AttackKind, SimConfig};
use super::metrics::{eval_ba, eval_detection, eval_ma, RoundMetrics};
use crate::client::{self, AttackStrategy, ClientProfile, Submission};
use crate::data::{self, PartitionSpec, PoisonSpec, Sample};
use crate::defense::{self, ScoreReport, VerificationTask};
use crate::error::{Error, Result};
use crate::ledger::{ContractState, Digest, Event, OffchainStore, TrustLedger};
use crate::nn::{self, ModelParams};
use crate::seed;
use crate::ClientId;

/// One verifier's scores as applied to the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedReport {
    pub verifier: ClientId,
    pub bad: bool,
    pub scores: BTreeMap<ClientId, f64>,
}

/// Per-round record beyond the headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub sampled: Vec<ClientId>,
    pub verifiers: Vec<ClientId>,
    pub reports: Vec<AppliedReport>,
    pub degenerate: bool,
    pub global_digest: Digest,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub config: SimConfig,
    pub attackers: Vec<ClientId>,
    pub bad_verifiers: Vec<ClientId>,
    pub metrics: Vec<RoundMetrics>,
    pub traces: Vec<RoundTrace>,
    pub final_trust: BTreeMap<ClientId, f64>,
    pub final_model: ModelParams,
    pub events: Vec<Event>,
}

impl SimReport {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.metrics.last().expect("a run has at least one round")
    }

    pub fn mean_round_time(&self) -> f64 {
        self.metrics.iter().map(|m| m.wall_time).sum::<f64>() / self.metrics.len() as f64
    }

    /// Mean of the defined TPR and TNR values over rounds `from..=to` (1-based).
    pub fn mean_detection(&self, from: usize, to: usize) -> (Option<f64>, Option<f64>) {
        let window = self.metrics.iter().filter(|m| (from..=to).contains(&m.round));
        let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        let (tpr, tnr): (Vec<_>, Vec<_>) = window.map(|m| (m.tpr, m.tnr)).unzip();
        (mean(tpr.into_iter().flatten().collect()), mean(tnr.into_iter().flatten().collect()))
    }
}

/// Everything fixed before the first round.
#[derive(Debug, Clone)]
pub struct World {
    pub clients: Vec<ClientProfile>,
    pub test: Vec<Sample>,
    pub triggered: Vec<Sample>,
    pub poison: PoisonSpec,
    pub attackers: BTreeSet<ClientId>,
    pub bad_verifiers: BTreeSet<ClientId>,
    pub initial: ModelParams,
}

impl World {
    pub fn build(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_clients;
        let (pool, test, dims, classes) = match &cfg.data_csv {
            Some(path) => {
                let mut all = data::load_csv(path)?;
                all.shuffle(&mut seed::rng_for(cfg.seed, "csv-split"));
                if all.len() <= cfg.test_size {
                    return Err(Error::Config(format!(
                        "{} has {} rows, fewer than test_size {}",
                        path.display(),
                        all.len(),
                        cfg.test_size
                    )));
                }
                let pool = all.split_off(cfg.test_size);
                let dims = pool[0].x.len();
                let classes = data::num_classes(&pool).max(data::num_classes(&all));
                (pool, all, dims, classes)
            }
            None => {
                // Generous pool so non-IID draws never exhaust a class.
                let train_n = 2 * n * cfg.samples_per_client;
                let mut all = data::gen_dataset(train_n + cfg.test_size, cfg.classes, cfg.features, seed::derive(cfg.seed, "data"))?;
                let pool = all.split_off(cfg.test_size);
                (pool, all, cfg.features, cfg.classes)
            }
        };
        let poison = PoisonSpec {
            target_class: cfg.target_class,
            trigger_coords: cfg.trigger_coords.clone(),
            trigger_value: cfg.trigger_value,
            pdr: cfg.pdr,
            edge_case: cfg.edge_case,
        };
        if cfg.target_class >= classes {
            return Err(Error::Config(format!("target_class {} outside {classes} classes", cfg.target_class)));
        }
        poison
            .validate(dims)
            .map_err(|e| Error::Config(format!("trigger: {e}")))?;
        let parts = data::partition_non_iid(
            &pool,
            &PartitionSpec {
                n_clients: n,
                non_iid: cfg.non_iid,
                per_client_size: cfg.samples_per_client,
                seed: seed::derive(cfg.seed, "partition"),
            },
        )?;

        let mut rng = seed::rng_for(cfg.seed, "attackers");
        let attackers: BTreeSet<ClientId> = index::sample(&mut rng, n, cfg.num_attackers())
            .into_iter()
            .map(|i| ClientId(i as u32))
            .collect();
        let bad_verifiers = pick_bad_verifiers(cfg, &attackers);

        let attack = match cfg.attack {
            AttackKind::None => AttackStrategy::None,
            AttackKind::Blackbox => AttackStrategy::Blackbox,
            // Radius is filled in per round when left on auto.
            AttackKind::Pgd => AttackStrategy::Pgd {
                radius: cfg.pgd_radius.unwrap_or(f64::INFINITY),
            },
            AttackKind::PgdMr => AttackStrategy::PgdMr {
                scale: cfg.replace_scale.unwrap_or(cfg.queue_size as f64),
                radius: cfg.pgd_radius.unwrap_or(f64::INFINITY),
            },
        };
        let clients = parts
            .into_iter()
            .enumerate()
            .map(|(i, local)| {
                let id = ClientId(i as u32);
                if attackers.contains(&id) {
                    ClientProfile::malicious(id, local, attack, poison.clone())
                } else {
                    ClientProfile::benign(id, local)
                }
            })
            .collect();
        let initial = ModelParams::mlp(dims, &[cfg.hidden], classes, seed::derive(cfg.seed, "init"))?;
        let triggered = data::triggered_testset(&test, &poison);
        if triggered.is_empty() {
            return Err(Error::Config("every test sample already has the target class".into()));
        }
        Ok(Self {
            clients,
            test,
            triggered,
            poison,
            attackers,
            bad_verifiers,
            initial,
        })
    }

    pub fn ids(&self) -> Vec<ClientId> {
        self.clients.iter().map(|c| c.id).collect()
    }
}

/// Dishonest verifiers: attackers first (they collude), topped up with
/// seeded benign clients.
fn pick_bad_verifiers(cfg: &SimConfig, attackers: &BTreeSet<ClientId>) -> BTreeSet<ClientId> {
    let want = (cfg.bad_verifier_fraction * cfg.n_clients as f64).round() as usize;
    let mut bad: BTreeSet<ClientId> = attackers.iter().copied().take(want).collect();
    if bad.len() < want {
        let benign: Vec<ClientId> = (0..cfg.n_clients as u32)
            .map(ClientId)
            .filter(|c| !attackers.contains(c))
            .collect();
        let mut rng = seed::rng_for(cfg.seed, "bad-verifiers");
        let extra = index::sample(&mut rng, benign.len(), want - bad.len());
        bad.extend(extra.into_iter().map(|i| benign[i]));
    }
    bad
}

/// A run in progress. [`Simulation::step`] advances one aggregation round.
pub struct Simulation {
    cfg: SimConfig,
    world: World,
    ids: Vec<ClientId>,
    store: OffchainStore,
    contract: ContractState,
    ledger: TrustLedger,
    global: ModelParams,
    verification_set: Vec<ClientId>,
    pending: Vec<AppliedReport>,
    round: usize,
    metrics: Vec<RoundMetrics>,
    traces: Vec<RoundTrace>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let world = World::build(&cfg)?;
        let ids = world.ids();
        let mut store = OffchainStore::new();
        let contract = ContractState::new(&world.initial, cfg.queue_size, &mut store)?;
        Ok(Self {
            ledger: TrustLedger::new(ids.iter().copied()),
            global: world.initial.clone(),
            ids,
            store,
            contract,
            verification_set: Vec::new(),
            pending: Vec::new(),
            round: 0,
            metrics: Vec::with_capacity(cfg.rounds),
            traces: Vec::with_capacity(cfg.rounds),
            world,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn ledger(&self) -> &TrustLedger {
        &self.ledger
    }

    pub fn contract(&self) -> &ContractState {
        &self.contract
    }

    pub fn store(&self) -> &OffchainStore {
        &self.store
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.cfg.rounds
    }

    fn eta(&self) -> f64 {
        self.cfg.learning_rate.max(f64::MIN_POSITIVE)
    }

    /// Run one aggregation round and return its metrics.
    pub fn step(&mut self) -> Result<&RoundMetrics> {
        let started = Instant::now();
        let t = self.round;
        let master = self.cfg.seed;

        let mut rng = seed::rng_for(master, &format!("round:{t}:sample"));
        let mut sampled: Vec<ClientId> = index::sample(&mut rng, self.ids.len(), self.cfg.queue_size)
            .into_iter()
            .map(|i| self.ids[i])
            .collect();
        sampled.sort_unstable();

        let subs = self.train(&sampled, t)?;
        for sub in subs {
            self.store.put(sub.model.canonical_bytes());
            self.contract.submit(&self.store, sub)?;
        }

        let mut verifiers = Vec::new();
        let mut reports = Vec::new();
        if self.cfg.defense {
            (verifiers, reports) = self.verify_round(t)?;
            let to_apply = if self.cfg.verify_lag {
                std::mem::replace(&mut self.pending, reports.clone())
            } else {
                reports.clone()
            };
            self.apply(&to_apply)?;
        }
        let queued = self.contract.queued_clients();
        let (tpr, tnr) = eval_detection(&queued, &self.ledger, &self.world.attackers)?;

        let outcome = if self.cfg.defense {
            self.contract.aggregate(&self.ledger, &mut self.store)
        } else {
            self.contract.fedavg_aggregate(&mut self.store)
        };
        let degenerate = match outcome {
            Ok(g) => {
                self.global = g;
                false
            }
            Err(Error::DegenerateAggregation) => true,
            Err(e) => return Err(e),
        };

        let ma = eval_ma(&self.global, &self.world.test)?;
        let ba = eval_ba(&self.global, &self.world.triggered, self.world.poison.target_class)?;
        self.round += 1;
        if self.is_done() && !self.pending.is_empty() {
            let rest = std::mem::take(&mut self.pending);
            self.apply(&rest)?;
        }
        self.traces.push(RoundTrace {
            round: self.round,
            sampled,
            verifiers,
            reports,
            degenerate,
            global_digest: self.contract.global_digest(),
        });
        self.metrics.push(RoundMetrics {
            round: self.round,
            ma,
            ba,
            tpr,
            tnr,
            wall_time: started.elapsed().as_secs_f64(),
        });
        Ok(self.metrics.last().expect("just pushed"))
    }

    fn train(&self, sampled: &[ClientId], t: usize) -> Result<Vec<Submission>> {
        let global = &self.global;
        let master = self.cfg.seed;
        sampled
            .par_iter()
            .map(|id| {
                let mut profile = self.world.clients[id.0 as usize].clone();
                let cfg = self
                    .cfg
                    .train_config(seed::derive(master, &format!("round:{t}:client:{id}")));
                if self.cfg.pgd_radius.is_none() {
                    if let AttackStrategy::Pgd { radius } | AttackStrategy::PgdMr { radius, .. } = &mut profile.attack {
                        // The attacker sizes its ball like its own honest update would be.
                        let honest = nn::sgd_train(global, &profile.dataset, &cfg)?;
                        *radius = honest.sub(global)?.l2_norm().max(f64::MIN_POSITIVE);
                    }
                }
                client::local_round(&profile, global, &cfg, t as u64)
            })
            .collect()
    }

    fn verify_round(&mut self, t: usize) -> Result<(Vec<ClientId>, Vec<AppliedReport>)> {
        let master = self.cfg.seed;
        if t % self.cfg.verify_refresh == 0 || self.verification_set.is_empty() {
            self.verification_set = self.contract.select_verification_set(
                &self.ids,
                self.cfg.verify_set_size,
                seed::derive(master, &format!("round:{t}:verification-set")),
            )?;
        }
        let verifiers = self.contract.select_verifiers(
            &self.ledger,
            &self.ids,
            self.cfg.verifiers,
            self.cfg.verifier_policy,
            seed::derive(master, &format!("round:{t}:verifiers")),
        );
        let queue = self.contract.queue();
        let targets: Vec<ClientId> = self
            .verification_set
            .iter()
            .copied()
            .filter(|c| queue.iter().any(|s| s.client == *c))
            .collect();
        let l = self.cfg.per_verifier.min(targets.len());
        if l < 2 {
            return Ok((verifiers, Vec::new()));
        }
        let assignment = defense::assign_clients_to_verifiers(
            &targets,
            &verifiers,
            l,
            seed::derive(master, &format!("round:{t}:assign")),
        )?;
        let eta = self.eta();
        let global = &self.global;
        let ledger = &self.ledger;
        let cfg = &self.cfg;
        let bad = &self.world.bad_verifiers;
        let reports = assignment
            .par_iter()
            .map(|(v, subset)| {
                let subs: Vec<&Submission> = subset
                    .iter()
                    .filter_map(|c| queue.iter().find(|s| s.client == *c))
                    .collect();
                let task = VerificationTask::from_submissions(*v, t as u64, global, eta, &subs, ledger)?;
                let mut report = defense::verify(&task)?;
                if let Some(s) = cfg.score_override {
                    report.scores.values_mut().for_each(|v| *v = s);
                }
                let is_bad = bad.contains(v);
                if is_bad {
                    report = defense::corrupt_report(
                        &report,
                        cfg.bad_verifier_mode,
                        seed::derive(master, &format!("round:{t}:corrupt:{v}")),
                    );
                }
                Ok(applied(report, is_bad))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((verifiers, reports))
    }

    /// Trust updates in verifier-id order, each report in client-id order.
    fn apply(&mut self, reports: &[AppliedReport]) -> Result<()> {
        for r in reports {
            for (c, s) in &r.scores {
                self.ledger.update(*c, crate::ledger::Score::from_value(*s)?)?;
            }
            self.contract
                .record_scores(r.verifier, r.scores.iter().map(|(c, s)| (*c, *s)));
        }
        Ok(())
    }

    pub fn finish(self) -> SimReport {
        SimReport {
            attackers: self.world.attackers.iter().copied().collect(),
            bad_verifiers: self.world.bad_verifiers.iter().copied().collect(),
            final_trust: self.ledger.snapshot(),
            final_model: self.global,
            events: self.contract.events().to_vec(),
            metrics: self.metrics,
            traces: self.traces,
            config: self.cfg,
        }
    }
}

fn applied(report: ScoreReport, bad: bool) -> AppliedReport {
    AppliedReport {
        verifier: report.verifier,
        bad,
        scores: report.scores.into_iter().map(|(c, s)| (c, s.value())).collect(),
    }
}

/// Run every configured round.
pub fn run(cfg: SimConfig) -> Result<SimReport> {
    let mut sim = Simulation::new(cfg)?;
    while !sim.is_done() {
        sim.step()?;
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_clients: 12,
            queue_size: 6,
            verify_set_size: 6,
            verifiers: 3,
            per_verifier: 4,
            rounds: 3,
            samples_per_client: 40,
            test_size: 200,
            hidden: 8,
            seed: 5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn world_shape() {
        let cfg = small();
        let w = World::build(&cfg).unwrap();
        assert_eq!(w.clients.len(), 12);
        assert_eq!(w.attackers.len(), 3);
        assert!(w.clients.iter().all(|c| c.data_size() == 40));
        for c in &w.clients {
            assert_eq!(c.is_malicious(), w.attackers.contains(&c.id));
        }
        assert!(w.triggered.iter().all(|s| s.y == 0));
        assert!(w.bad_verifiers.is_empty());
    }

    #[test]
    fn bad_verifiers_start_with_attackers() {
        let mut cfg = small();
        cfg.bad_verifier_fraction = 0.5;
        let w = World::build(&cfg).unwrap();
        assert_eq!(w.bad_verifiers.len(), 6);
        assert!(w.attackers.is_subset(&w.bad_verifiers));
        cfg.bad_verifier_fraction = 0.1;
        let w = World::build(&cfg).unwrap();
        assert_eq!(w.bad_verifiers.len(), 1);
        assert!(w.bad_verifiers.is_subset(&w.attackers));
    }

    #[test]
    fn runs_and_traces_every_round() {
        let report = run(small()).unwrap();
        assert_eq!(report.metrics.len(), 3);
        assert_eq!(report.traces.len(), 3);
        for (i, (m, tr)) in report.metrics.iter().zip(&report.traces).enumerate() {
            assert_eq!(m.round, i + 1);
            assert!((0.0..=1.0).contains(&m.ma) && (0.0..=1.0).contains(&m.ba));
            assert_eq!(tr.sampled.len(), 6);
            assert!(tr.sampled.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(tr.verifiers.len(), 3);
            assert_eq!(tr.reports.len(), 3);
            assert!(tr.reports.iter().all(|r| r.scores.len() == 4));
        }
        for s in report.final_trust.values() {
            assert!((0.0..=1.0).contains(s));
        }
    }

    #[test]
    fn lagged_scores_are_still_applied() {
        let mut cfg = small();
        cfg.verify_lag = true;
        let report = run(cfg).unwrap();
        let applied: usize = report.traces.iter().flat_map(|t| &t.reports).map(|r| r.scores.len()).sum();
        let counted = report
            .events
            .iter()
            .filter(|e| e.kind == crate::ledger::EventKind::ScoresReceived)
            .count();
        assert_eq!(applied, counted);
    }

    #[test]
    fn rejects_invalid_config_before_running() {
        let mut cfg = small();
        cfg.queue_size = 13;
        assert!(matches!(run(cfg), Err(Error::Config(_))));
    }
}
