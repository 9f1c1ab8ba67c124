use std::time::{Duration, Instant};

use rand::Rng;

use fedblock::defense::{self, TaskEntry, VerificationTask};
use fedblock::harness::{self, emit, AttackKind, SimConfig, SimReport, Simulation, World};
use fedblock::ledger::EventKind;
use fedblock::nn::{self, ModelParams};
use fedblock::{seed, ClientId};

fn tiny(seed: u64) -> SimConfig {
    SimConfig {
        n_clients: 12,
        queue_size: 6,
        verify_set_size: 6,
        verifiers: 3,
        per_verifier: 3,
        rounds: 4,
        samples_per_client: 50,
        test_size: 300,
        seed,
        ..SimConfig::default()
    }
}

fn without_wall_time(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn one_clean_round_is_plain_fedavg() {
    let cfg = SimConfig {
        attacker_ratio: 0.0,
        defense: false,
        rounds: 1,
        ..tiny(3)
    };
    let world = World::build(&cfg).unwrap();
    let report = harness::run(cfg.clone()).unwrap();
    let sampled = &report.traces[0].sampled;

    // textbook FedAvg, written out longhand
    let locals: Vec<(ModelParams, f64)> = sampled
        .iter()
        .map(|id| {
            let c = &world.clients[id.0 as usize];
            let tc = cfg.train_config(seed::derive(cfg.seed, &format!("round:0:client:{id}")));
            (nn::sgd_train(&world.initial, &c.dataset, &tc).unwrap(), c.data_size() as f64)
        })
        .collect();
    let total: f64 = locals.iter().map(|(_, n)| n).sum();
    let mut expected = world.initial.zeros_like();
    for (m, n) in &locals {
        expected.add_scaled(n / total, m).unwrap();
    }

    assert_eq!(report.final_model.canonical_bytes(), expected.canonical_bytes());
    let ma = harness::eval_ma(&expected, &world.test).unwrap();
    assert_eq!(report.final_metrics().ma.to_bits(), ma.to_bits());
}

#[test]
fn identical_configs_give_identical_runs() {
    let a = harness::run(tiny(8)).unwrap();
    let b = harness::run(tiny(8)).unwrap();
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!((x.round, x.ma, x.ba, x.tpr, x.tnr), (y.round, y.ma, y.ba, y.tpr, y.tnr));
    }
    assert_eq!(a.traces, b.traces);
    assert_eq!(a.events, b.events);
    assert_eq!(a.final_trust, b.final_trust);

    let c = harness::run(tiny(9)).unwrap();
    assert_ne!(a.traces, c.traces);
}

#[test]
fn rates_stay_in_unit_interval() {
    let report = harness::run(SimConfig {
        rounds: 6,
        bad_verifier_fraction: 0.3,
        bad_verifier_mode: defense::CorruptionMode::Random,
        ..tiny(2)
    })
    .unwrap();
    for m in &report.metrics {
        for v in [Some(m.ma), Some(m.ba), m.tpr, m.tnr].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    for t in &report.traces {
        for r in &t.reports {
            assert!(r.scores.values().all(|s| [0.0, 0.5, 1.0].contains(s)));
        }
    }
}

#[test]
fn global_digest_matches_store_after_every_round() {
    let mut sim = Simulation::new(tiny(4)).unwrap();
    while !sim.is_done() {
        sim.step().unwrap();
        let stored = sim.contract().global_model(sim.store()).unwrap();
        assert_eq!(&stored, sim.global());
    }
    let updates = sim
        .contract()
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::GlobalUpdated)
        .count();
    assert_eq!(updates, 4);
}

#[test]
fn emitted_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig { rounds: 3, ..tiny(5) };
    let first = harness::run(cfg.clone()).unwrap();
    emit(&first, dir.path().join("a")).unwrap();
    let second = harness::run(cfg).unwrap();
    emit(&second, dir.path().join("b")).unwrap();

    let read = |sub: &str, f: &str| std::fs::read_to_string(dir.path().join(sub).join(f)).unwrap();
    let csv = read("a", emit::METRICS_FILE);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("round,ma,ba,tpr,tnr,wall_time\n"));
    assert_eq!(without_wall_time(&csv), without_wall_time(&read("b", emit::METRICS_FILE)));

    let summary: serde_json::Value = serde_json::from_str(&read("a", emit::SUMMARY_FILE)).unwrap();
    assert_eq!(summary["rounds"], 3);
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["config"]["rounds"], 3);
    assert_eq!(summary["hash"], "sha256");

    let events = read("a", emit::EVENTS_FILE);
    assert_eq!(events.lines().count(), first.events.len());
    assert_eq!(events, read("b", emit::EVENTS_FILE));
    for line in events.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("round").is_some() && v.get("kind").is_some());
    }
}

#[test]
fn emit_to_unwritable_path_is_io_error() {
    let file = tempfile::NamedTempFile::new().unwrap();
    let report = harness::run(SimConfig { rounds: 1, ..tiny(1) }).unwrap();
    let err = emit(&report, file.path().join("below-a-file")).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn poisoned_fedavg_learns_the_backdoor() {
    let cfg = SimConfig {
        n_clients: 10,
        queue_size: 10,
        verify_set_size: 10,
        attacker_ratio: 0.3,
        pdr: 0.5,
        rounds: 50,
        defense: false,
        seed: 17,
        ..SimConfig::default()
    };
    let report = harness::run(cfg).unwrap();
    assert_eq!(report.attackers.len(), 3);
    assert!(report.final_metrics().ba >= 0.8, "{}", report.final_metrics().ba);
}

#[test]
fn all_attack_kinds_run() {
    for kind in [AttackKind::None, AttackKind::Blackbox, AttackKind::Pgd, AttackKind::PgdMr] {
        let r: SimReport = harness::run(SimConfig { attack: kind, rounds: 2, ..tiny(6) }).unwrap();
        assert_eq!(r.metrics.len(), 2);
        assert_eq!(r.attackers.is_empty(), kind == AttackKind::None);
    }
}

#[test]
fn refreshed_verification_set_outside_the_queue() {
    let cfg = SimConfig {
        verify_set_size: 8,
        per_verifier: 4,
        verify_refresh: 2,
        rounds: 4,
        ..tiny(7)
    };
    let report = harness::run(cfg).unwrap();
    let requested = report
        .events
        .iter()
        .filter(|e| e.kind == EventKind::VerificationRequested)
        .count();
    // drawn on rounds 0 and 2 only
    assert_eq!(requested, 16);
    for t in &report.traces {
        for r in &t.reports {
            assert!(r.scores.keys().all(|c| t.sampled.contains(c)));
        }
    }
}

fn timing_task(rng: &mut seed::SimRng, clients: &[u32]) -> VerificationTask {
    let (classes, width) = (5, 32);
    let entries = clients
        .iter()
        .map(|c| TaskEntry {
            client: ClientId(*c),
            du: (0..classes * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
            db: (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
            data_size: 200,
            weights: (0..classes * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let trust = clients.iter().map(|c| (ClientId(*c), 1.0)).collect();
    VerificationTask::new(ClientId(1000), 0, classes, width, entries, trust).unwrap()
}

#[test]
fn per_verifier_work_scales_with_l() {
    let mut rng = seed::rng(3);
    let all: Vec<u32> = (0..30).collect();
    let big: Vec<VerificationTask> = (0..20).map(|_| timing_task(&mut rng, &all)).collect();
    let small: Vec<VerificationTask> = (0..20)
        .map(|_| {
            let pick: Vec<u32> = rand::seq::index::sample(&mut rng, 30, 7).into_iter().map(|i| i as u32).collect();
            timing_task(&mut rng, &pick)
        })
        .collect();
    let cost = |tasks: &[VerificationTask]| {
        let mut best = Duration::MAX;
        for _ in 0..5 {
            let t = Instant::now();
            for task in tasks {
                std::hint::black_box(defense::verify(task).unwrap());
            }
            best = best.min(t.elapsed());
        }
        best
    };
    let (l7, l30) = (cost(&small), cost(&big));
    assert!(l7 < l30, "L=7 took {l7:?}, L=30 took {l30:?}");
}
