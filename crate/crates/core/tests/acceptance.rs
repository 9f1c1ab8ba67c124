//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;

use fedblock::defense::{self, CorruptionMode, TaskEntry, VerificationTask};
use fedblock::harness::{self, AttackKind, SimConfig, SimReport};
use fedblock::ledger::{self, ContractState, OffchainStore, Score, TrustLedger, VerifierPolicy};
use fedblock::nn::ModelParams;
use fedblock::{data, planner, seed, ClientId, Error};

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn desk(seed: u64, f: impl FnOnce(&mut SimConfig)) -> SimConfig {
    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    f(&mut cfg);
    cfg
}

fn run(cfg: SimConfig) -> SimReport {
    harness::run(cfg).expect("desk run")
}

/// Runs shared between criteria 3 to 6, one set per seed.
struct Runs {
    clean: Vec<SimReport>,
    off: Vec<SimReport>,
    on: Vec<SimReport>,
}

impl Runs {
    fn new() -> Self {
        let each = |f: fn(&mut SimConfig)| SEEDS.iter().map(|s| run(desk(*s, f))).collect::<Vec<_>>();
        Runs {
            clean: each(|c| {
                c.attacker_ratio = 0.0;
                c.defense = false;
            }),
            off: each(|c| c.defense = false),
            on: each(|c| c.defense = true),
        }
    }
}

fn c1_planner_consistency() -> Outcome {
    let (l, tl) = timed(|| planner::expected_l(30, 15).unwrap());
    let (v, tv) = timed(|| planner::expected_v(30, 7).unwrap());
    let fast = tl < Duration::from_secs(1) && tv < Duration::from_secs(1);
    let l_ok = l.round() == 7.0;
    let v_ok = v.round() == 15.0;
    // the planner report has to flag any closed form the oracle disagrees with
    let rl = planner::plan_subset_size(30, 15, 200_000, 1).unwrap();
    let rv = planner::plan_verifiers(30, 7, 200_000, 1).unwrap();
    let surfaced = [&rl, &rv].iter().all(|r| {
        let off = (r.closed_form - r.mc_mean).abs() > 3.0 * r.mc_std_err;
        !off || (r.discrepant() && r.render().contains("DISCREPANCY"))
    });
    outcome(
        l_ok && v_ok && fast && surfaced,
        format!(
            "E[L](30,15)={l:.4} -> {} (want 7, {tl:?}); E[V](30,7)={v:.4} -> {} (want 15, {tv:?}); \
             Monte Carlo E[L]={:.3}±{:.3}, E[V]={:.3}±{:.3}; discrepancies surfaced: {surfaced}",
            l.round(),
            v.round(),
            rl.mc_mean,
            rl.mc_std_err,
            rv.mc_mean,
            rv.mc_std_err
        ),
    )
}

fn c2_planner_oracle() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for m in [5u64, 10, 20] {
        let mut ls = vec![1, m.div_ceil(4), m.div_ceil(2), m];
        ls.dedup();
        for l in ls {
            let closed = planner::expected_v(m, l).unwrap();
            let mc = planner::mc_coverage(m as usize, l as usize, 1_000_000, 7).unwrap();
            let z = (closed - mc.mean).abs() / mc.std_err.max(f64::MIN_POSITIVE);
            let z = if mc.std_err == 0.0 && closed == mc.mean { 0.0 } else { z };
            worst = worst.max(z);
            if z > 3.0 {
                failures.push(format!("(M={m},L={l}) z={z:.2}"));
            }
        }
        let harmonic: f64 = (1..=m).map(|k| 1.0 / k as f64).sum::<f64>() * m as f64;
        let closed = planner::expected_v(m, 1).unwrap();
        if (closed - harmonic).abs() > 1e-6 {
            failures.push(format!("E[V]({m},1)={closed} vs M·H_M={harmonic}"));
        }
    }
    let took = started.elapsed();
    let fast = took < Duration::from_secs(120);
    outcome(
        failures.is_empty() && fast,
        format!("worst z={worst:.2}, {took:?}{}", if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }),
    )
}

fn c3_attack_baseline(runs: &Runs) -> Outcome {
    let ba: Vec<f64> = runs.off.iter().map(|r| r.final_metrics().ba).collect();
    outcome(ba.iter().all(|b| *b >= 0.8), format!("undefended final BA per seed {ba:.3?} (need ≥ 0.8)"))
}

fn defended_bounds(label: &str, defended: &[SimReport], clean: &[SimReport]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, c) in defended.iter().zip(clean) {
        let (ba, ma, base) = (d.final_metrics().ba, d.final_metrics().ma, c.final_metrics().ma);
        let good = ba <= 0.10 && (ma - base).abs() <= 0.05;
        ok &= good;
        parts.push(format!("seed {}: BA={ba:.3} MA={ma:.3} clean MA={base:.3}", d.config.seed));
    }
    (ok, format!("{label}: {}", parts.join("; ")))
}

fn c4_defense(runs: &Runs) -> Outcome {
    let (bounds, detail) = defended_bounds("blackbox", &runs.on, &runs.clean);
    let mut det_ok = true;
    let mut det = Vec::new();
    for r in &runs.on {
        let (tpr, tnr) = r.mean_detection(20, 100);
        let (tpr, tnr) = (tpr.unwrap_or(0.0), tnr.unwrap_or(0.0));
        det_ok &= tpr >= 0.9 && tnr >= 0.7;
        det.push(format!("TPR={tpr:.3} TNR={tnr:.3}"));
    }
    outcome(
        bounds && det_ok,
        format!("{detail}; rounds 20-100 mean {} (need BA ≤ 0.10, |ΔMA| ≤ 0.05, TPR ≥ 0.9, TNR ≥ 0.7)", det.join(", ")),
    )
}

fn c5_variants(runs: &Runs) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for (label, kind) in [("pgd", AttackKind::Pgd), ("pgd_mr", AttackKind::PgdMr)] {
        let reports: Vec<SimReport> = SEEDS.iter().map(|s| run(desk(*s, |c| c.attack = kind))).collect();
        let (b, d) = defended_bounds(label, &reports, &runs.clean);
        ok &= b;
        details.push(d);
    }
    outcome(ok, details.join(" | "))
}

fn c6_caav() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in SEEDS {
        let with = |policy| {
            run(desk(s, |c| {
                c.bad_verifier_fraction = 0.3;
                c.bad_verifier_mode = CorruptionMode::Reverse;
                c.verifier_policy = policy;
            }))
        };
        let caav = with(VerifierPolicy::Caav).final_metrics().ba;
        let open = with(VerifierPolicy::Open).final_metrics().ba;
        ok &= caav <= 0.10 && open > caav;
        parts.push(format!("seed {s}: caav BA={caav:.3} open BA={open:.3}"));
    }
    outcome(ok, format!("{} (need caav ≤ 0.10 and open > caav)", parts.join("; ")))
}

// ---- criterion 7: property checks with independent oracles ----

fn fd_gradient() -> Result<usize, String> {
    let m = ModelParams::mlp(5, &[6], 3, 21).unwrap();
    let mut rng = seed::rng(22);
    let batch: Vec<data::Sample> = (0..8)
        .map(|_| data::Sample {
            x: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            y: rng.random_range(0..3),
        })
        .collect();
    let g = m.gradient(&batch).unwrap();
    let analytic: Vec<f64> = g.params().collect();
    let base: Vec<f64> = m.params().collect();
    let rebuild = |flat: &[f64]| {
        let mut p = m.clone();
        let mut k = 0;
        for layer in p.layers_mut() {
            for w in layer.weights_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in layer.bias_mut() {
                *b = flat[k];
                k += 1;
            }
        }
        p
    };
    let h = 1e-5;
    for (i, a) in analytic.iter().enumerate() {
        let mut up = base.clone();
        up[i] += h;
        let mut down = base.clone();
        down[i] -= h;
        let fd = (rebuild(&up).loss(&batch).unwrap() - rebuild(&down).loss(&batch).unwrap()) / (2.0 * h);
        if (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) > 1e-4 {
            return Err(format!("param {i}: {a} vs {fd}"));
        }
    }
    Ok(analytic.len())
}

fn trust_mean_identity() -> Result<(), String> {
    let mut rng = seed::rng(31);
    for trial in 0..200 {
        let n = rng.random_range(1..300);
        let hist: Vec<Score> = (0..n).map(|_| Score::ALL[rng.random_range(0..3)]).collect();
        let mut l = TrustLedger::new([ClientId(0)]);
        for s in &hist {
            l.update(ClientId(0), *s).unwrap();
        }
        let halves: u64 = hist.iter().map(|s| (s.value() * 2.0) as u64).sum();
        let mean = halves as f64 / (2.0 * n as f64);
        let got = l.trust(ClientId(0)).unwrap();
        if !(0.0..=1.0).contains(&got) || (got - mean).abs() > 1e-12 {
            return Err(format!("trial {trial}: {got} vs {mean}"));
        }
    }
    Ok(())
}

fn scale_invariance() -> Result<(), String> {
    let mut rng = seed::rng(41);
    for trial in 0..200 {
        let n = rng.random_range(2..8);
        let models: Vec<ModelParams> = (0..n).map(|i| ModelParams::mlp(3, &[4], 2, trial * 10 + i).unwrap()).collect();
        let refs: Vec<&ModelParams> = models.iter().collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let c = [2.0, 0.25, 1024.0][trial as usize % 3];
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let a = ledger::weighted_average(&refs, &w).unwrap();
        let b = ledger::weighted_average(&refs, &scaled).unwrap();
        if a.canonical_bytes() != b.canonical_bytes() {
            return Err(format!("trial {trial}: scale {c} changed the aggregate"));
        }
    }
    Ok(())
}

fn random_task(rng: &mut seed::SimRng, n: usize) -> VerificationTask {
    let (classes, width) = (3, 4);
    let entries = (0..n as u32)
        .map(|c| TaskEntry {
            client: ClientId(c),
            du: (0..classes * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
            db: (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
            data_size: rng.random_range(10..100),
            weights: (0..classes * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let trust = (0..n as u32).map(|c| (ClientId(c), rng.random_range(0.0..1.0))).collect();
    VerificationTask::new(ClientId(99), 0, classes, width, entries, trust).unwrap()
}

fn strict_median_bound() -> Result<(), String> {
    let mut rng = seed::rng(51);
    for trial in 0..500 {
        let n = rng.random_range(2..16);
        let t = random_task(&mut rng, n);
        let s1 = defense::filter_gradient_similarity(&t).unwrap();
        if s1.len() > n / 2 {
            return Err(format!("trial {trial}: |S1|={} for |C|={n}", s1.len()));
        }
    }
    Ok(())
}

fn sse(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    (0..2)
        .map(|k| {
            let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| **l == k).map(|(p, _)| p).collect();
            if members.is_empty() {
                return 0.0;
            }
            let d = members[0].len();
            let centre: Vec<f64> = (0..d).map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64).collect();
            members
                .iter()
                .map(|m| m.iter().zip(&centre).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .sum()
        })
        .sum()
}

fn kmeans_vs_exhaustive() -> Result<(), String> {
    let mut rng = seed::rng(61);
    for trial in 0..100 {
        let n = rng.random_range(2..=12);
        let split = rng.random_range(1..n);
        let centre: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let points: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let off = if i < split { 0.0 } else { 10.0 };
                centre.iter().map(|c| c + off + rng.random_range(-0.5..0.5)).collect()
            })
            .collect();
        let got = defense::two_means(&points);
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1..(1u32 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let e = sse(&points, &labels);
            if e < best.0 {
                best = (e, mask);
            }
        }
        let want: Vec<usize> = (0..n).map(|i| ((best.1 >> i) & 1) as usize).collect();
        let same = got == want || got.iter().zip(&want).all(|(a, b)| a != b);
        if !same {
            return Err(format!("trial {trial}: {got:?} vs {want:?}"));
        }
    }
    Ok(())
}

fn reverse_involution() -> Result<(), String> {
    let mut rng = seed::rng(71);
    for trial in 0..200 {
        let n = rng.random_range(1..20);
        let scores: BTreeMap<ClientId, Score> = (0..n).map(|c| (ClientId(c), Score::ALL[rng.random_range(0..3)])).collect();
        let r = defense::ScoreReport {
            verifier: ClientId(0),
            round: 0,
            scores,
        };
        let twice = defense::corrupt_report(&defense::corrupt_report(&r, CorruptionMode::Reverse, 1), CorruptionMode::Reverse, 2);
        if twice != r {
            return Err(format!("trial {trial}"));
        }
    }
    Ok(())
}

fn tamper_rejection() -> Result<(), String> {
    let global = ModelParams::mlp(3, &[4], 2, 1).unwrap();
    let mut store = OffchainStore::new();
    let mut contract = ContractState::new(&global, 2, &mut store).unwrap();
    let local = ModelParams::mlp(3, &[4], 2, 2).unwrap();
    let sub = fedblock::client::Submission::new(ClientId(0), 0, &global, local.clone(), 10, 0.1).unwrap();
    let digest = store.put(local.canonical_bytes());
    let mut forged = local.canonical_bytes();
    let last = forged.len() - 1;
    forged[last] ^= 1;
    store.tamper(&digest, forged);
    let events = contract.events().len();
    match contract.submit(&store, sub) {
        Err(Error::Integrity { .. }) if contract.events().len() == events && contract.queue().is_empty() => Ok(()),
        other => Err(format!("tampered blob accepted or mis-reported: {other:?}")),
    }
}

fn full_run_determinism() -> Result<(), String> {
    let cfg = desk(9, |c| c.rounds = 10);
    let a = run(cfg.clone());
    let b = run(cfg);
    let strip = |r: &SimReport| {
        r.metrics
            .iter()
            .map(|m| (m.round, m.ma.to_bits(), m.ba.to_bits(), m.tpr.map(f64::to_bits), m.tnr.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    if strip(&a) != strip(&b) || a.traces != b.traces || a.events != b.events || a.final_model != b.final_model {
        return Err("two identical runs diverged".into());
    }
    Ok(())
}

fn c7_properties() -> Outcome {
    let checks: Vec<(&str, Result<String, String>)> = vec![
        ("finite differences", fd_gradient().map(|n| format!("{n} params"))),
        ("trust mean", trust_mean_identity().map(|_| "ok".into())),
        ("weight scale invariance", scale_invariance().map(|_| "ok".into())),
        ("|S1| ≤ ⌊|C|/2⌋", strict_median_bound().map(|_| "ok".into())),
        ("k-means vs exhaustive", kmeans_vs_exhaustive().map(|_| "ok".into())),
        ("reverse involution", reverse_involution().map(|_| "ok".into())),
        ("tamper rejection", tamper_rejection().map(|_| "ok".into())),
        ("run determinism", full_run_determinism().map(|_| "ok".into())),
    ];
    let pass = checks.iter().all(|(_, r)| r.is_ok());
    let detail = checks
        .iter()
        .map(|(name, r)| match r {
            Ok(m) => format!("{name}: {m}"),
            Err(e) => format!("{name}: FAILED {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn c8_equivalence() -> Outcome {
    let base = desk(4, |c| c.rounds = 20);
    let forced = run(SimConfig {
        defense: true,
        score_override: Some(Score::Benign),
        ..base.clone()
    });
    let fedavg = run(SimConfig {
        defense: false,
        ..base
    });
    let same = forced
        .traces
        .iter()
        .zip(&fedavg.traces)
        .filter(|(a, b)| a.global_digest == b.global_digest)
        .count();
    let bits = forced.final_model.canonical_bytes() == fedavg.final_model.canonical_bytes();
    outcome(
        same == 20 && bits,
        format!("{same}/20 rounds with identical global digests; final models bit-identical: {bits}"),
    )
}

// ---- worked examples from the round-loop contract ----

fn ex_attack_free_scores() -> Outcome {
    let r = run(desk(1, |c| c.attack = AttackKind::None));
    let clean_rounds = r
        .traces
        .iter()
        .filter(|t| t.reports.iter().all(|rep| rep.scores.values().all(|s| *s != 0.0)))
        .count();
    let frac = clean_rounds as f64 / r.traces.len() as f64;
    outcome(
        frac >= 0.9,
        format!("attack-free run: {clean_rounds}/{} rounds with no benign client scored 0 (need ≥ 90%)", r.traces.len()),
    )
}

fn ex_defense_lowers_ba(runs: &Runs) -> Outcome {
    let pairs: Vec<(f64, f64)> = runs
        .off
        .iter()
        .zip(&runs.on)
        .map(|(a, b)| (a.final_metrics().ba, b.final_metrics().ba))
        .collect();
    outcome(
        pairs.iter().all(|(off, on)| off > on),
        format!("(BA off, BA on) per seed {pairs:.3?}"),
    )
}

fn main() {
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut record = |name: &str, o: Outcome| {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name.to_string(), o));
    };
    record("criterion 1 planner consistency", c1_planner_consistency());
    record("criterion 2 planner vs Monte Carlo", c2_planner_oracle());
    let runs = Runs::new();
    record("criterion 3 attack efficacy baseline", c3_attack_baseline(&runs));
    record("criterion 4 defense efficacy", c4_defense(&runs));
    record("criterion 5 attack-variant robustness", c5_variants(&runs));
    record("criterion 6 CAAV robustness", c6_caav());
    record("criterion 7 unit and property suites", c7_properties());
    record("criterion 8 forced-trust equivalence", c8_equivalence());
    record("example attack-free scoring", ex_attack_free_scores());
    record("example defense lowers BA", ex_defense_lowers_ba(&runs));

    let failed: Vec<&String> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| n).collect();
    println!(
        "\nacceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
