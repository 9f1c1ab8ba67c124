//! Verifier-side scoring from ultimate-layer gradients.
//!
//! A verifier sees, per client, only `(∇U, ∇b)`, the self-reported data size
//! and the public global model. Two filters each nominate a suspicious subset:
//!
//! 1. gradient similarity: the cosine between a client's ultimate weights'
//!    deviation from the size-weighted mean and the mean ultimate gradient,
//!    min-max scaled; clients strictly above the (lower) median are suspects;
//! 2. by-class k-means: 2-means over each client's vector of distances to
//!    every client's by-class gradient; the cluster holding the least trusted
//!    client is suspect.
//!
//! Suspects of both filters score 0, of neither 1, of exactly one ½.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::client::Submission;
use crate::error::{Error, Result};
use crate::ledger::{Score, TrustLedger};
use crate::nn::{self, ModelParams};
use crate::seed;
use crate::ClientId;

pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEntry {
    pub client: ClientId,
    /// `[classes × width]`, row-major.
    pub du: Vec<f64>,
    pub db: Vec<f64>,
    pub data_size: usize,
    /// Reconstructed ultimate weights `U_global − η·∇U`.
    pub weights: Vec<f64>,
}

/// Everything one verifier needs to score its assigned clients.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationTask {
    pub verifier: ClientId,
    pub round: u64,
    classes: usize,
    width: usize,
    /// Sorted by client id.
    entries: Vec<TaskEntry>,
    trust: BTreeMap<ClientId, f64>,
}

impl VerificationTask {
    pub fn new(
        verifier: ClientId,
        round: u64,
        classes: usize,
        width: usize,
        mut entries: Vec<TaskEntry>,
        trust: BTreeMap<ClientId, f64>,
    ) -> Result<Self> {
        for e in &entries {
            if e.du.len() != classes * width || e.weights.len() != classes * width || e.db.len() != classes {
                return Err(Error::shape(format!(
                    "client {} gradient does not match [{classes}x{width}]",
                    e.client
                )));
            }
            if e.du.iter().chain(&e.db).chain(&e.weights).any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!("verification input of client {}", e.client)));
            }
            if !trust.contains_key(&e.client) {
                return Err(Error::UnknownClient(e.client));
            }
        }
        entries.sort_by_key(|e| e.client);
        if entries.windows(2).any(|w| w[0].client == w[1].client) {
            return Err(Error::domain("client listed twice in a verification task"));
        }
        Ok(Self {
            verifier,
            round,
            classes,
            width,
            entries,
            trust,
        })
    }

    /// Build a task from queued submissions, reconstructing each client's
    /// ultimate weights from the public global model.
    pub fn from_submissions(
        verifier: ClientId,
        round: u64,
        global: &ModelParams,
        eta: f64,
        subs: &[&Submission],
        ledger: &TrustLedger,
    ) -> Result<Self> {
        let u = global.ultimate();
        let (classes, width) = (u.out_dim(), u.in_dim());
        let mut trust = BTreeMap::new();
        let entries = subs
            .iter()
            .map(|s| {
                trust.insert(s.client, ledger.trust(s.client)?);
                let du = s.ug.du().to_vec();
                let weights = u.weights().iter().zip(&du).map(|(w, d)| w - eta * d).collect();
                Ok(TaskEntry {
                    client: s.client,
                    du,
                    db: s.ug.db().to_vec(),
                    data_size: s.data_size,
                    weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(verifier, round, classes, width, entries, trust)
    }

    pub fn entries(&self) -> &[TaskEntry] {
        &self.entries
    }

    pub fn clients(&self) -> Vec<ClientId> {
        self.entries.iter().map(|e| e.client).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn require_pair(&self) -> Result<()> {
        if self.entries.len() < 2 {
            return Err(Error::domain(format!(
                "verification needs at least 2 clients, got {}",
                self.entries.len()
            )));
        }
        Ok(())
    }

    fn weighted_mean(&self, pick: impl Fn(&TaskEntry) -> &[f64]) -> Vec<f64> {
        let total: f64 = self.entries.iter().map(|e| e.data_size as f64).sum();
        let mut out = vec![0.0; self.classes * self.width];
        for e in &self.entries {
            let w = e.data_size as f64 / total;
            for (o, v) in out.iter_mut().zip(pick(e)) {
                *o += w * v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub verifier: ClientId,
    pub round: u64,
    pub scores: BTreeMap<ClientId, Score>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Min-max scaled similarity scores `a_i`, in task (client id) order.
/// `None` when the mean gradient is zero or every score is equal.
pub fn similarity_scores(task: &VerificationTask) -> Result<Option<Vec<f64>>> {
    task.require_pair()?;
    let w_mean = task.weighted_mean(|e| &e.weights);
    let g_mean = task.weighted_mean(|e| &e.du);
    let g_norm = norm(&g_mean);
    if g_norm == 0.0 {
        return Ok(None);
    }
    let raw: Vec<f64> = task
        .entries
        .iter()
        .map(|e| {
            let dev: Vec<f64> = e.weights.iter().zip(&w_mean).map(|(a, b)| a - b).collect();
            let n = norm(&dev);
            if n == 0.0 {
                0.0
            } else {
                dot(&dev, &g_mean) / (n * g_norm)
            }
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(None);
    }
    Ok(Some(raw.into_iter().map(|a| (a - lo) / (hi - lo)).collect()))
}

/// Lower median: element `⌊(n−1)/2⌋` of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Filter 1: clients whose scaled similarity lies strictly above the median.
pub fn filter_gradient_similarity(task: &VerificationTask) -> Result<BTreeSet<ClientId>> {
    let Some(a) = similarity_scores(task)? else {
        return Ok(BTreeSet::new());
    };
    let med = lower_median(&a);
    Ok(task
        .entries
        .iter()
        .zip(&a)
        .filter(|(_, s)| **s > med)
        .map(|(e, _)| e.client)
        .collect())
}

/// Each client's vector of L2 distances from its by-class gradient to every
/// client's (itself included), in task order.
pub fn byclass_features(task: &VerificationTask) -> Vec<Vec<f64>> {
    let mus: Vec<Vec<f64>> = task
        .entries
        .iter()
        .map(|e| nn::by_class(task.classes, task.width, &e.du, &e.db))
        .collect();
    mus.iter()
        .map(|mi| mus.iter().map(|mj| dist(mi, mj)).collect())
        .collect()
}

/// Deterministic 2-means. Centroids start at the two points farthest apart
/// (first such pair in index order); Lloyd iterations run until the
/// assignment stops changing or [`KMEANS_MAX_ITERS`] is reached. Equidistant
/// points join cluster 0. Returns a cluster label per point.
pub fn two_means(points: &[Vec<f64>]) -> Vec<usize> {
    let n = points.len();
    if n < 2 {
        return vec![0; n];
    }
    let (mut a, mut b, mut best) = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&points[i], &points[j]);
            if d > best {
                (a, b, best) = (i, j, d);
            }
        }
    }
    let mut centroids = [points[a].clone(), points[b].clone()];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<usize> = points
            .iter()
            .map(|p| usize::from(dist(p, &centroids[1]) < dist(p, &centroids[0])))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (k, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == k)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            let inv = 1.0 / members.len() as f64;
            for (d, slot) in c.iter_mut().enumerate() {
                *slot = members.iter().map(|m| m[d]).sum::<f64>() * inv;
            }
        }
    }
    labels
}

/// Filter 2: the k-means cluster containing the least trusted client
/// (lowest id on ties).
pub fn filter_byclass_kmeans(task: &VerificationTask) -> Result<BTreeSet<ClientId>> {
    task.require_pair()?;
    let features = byclass_features(task);
    if features.iter().flatten().all(|d| *d == 0.0) {
        return Ok(BTreeSet::new());
    }
    let labels = two_means(&features);
    if labels.iter().all(|l| *l == labels[0]) {
        return Ok(BTreeSet::new());
    }
    let mut anchor = 0;
    for (i, e) in task.entries.iter().enumerate() {
        // entries are id-sorted, so strict < keeps the lowest id on ties
        if task.trust[&e.client] < task.trust[&task.entries[anchor].client] {
            anchor = i;
        }
    }
    Ok(task
        .entries
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == labels[anchor])
        .map(|(e, _)| e.client)
        .collect())
}

pub fn combine_scores(
    s1: &BTreeSet<ClientId>,
    s2: &BTreeSet<ClientId>,
    clients: &[ClientId],
) -> BTreeMap<ClientId, Score> {
    clients
        .iter()
        .map(|c| {
            let s = match (s1.contains(c), s2.contains(c)) {
                (true, true) => Score::Malicious,
                (false, false) => Score::Benign,
                _ => Score::Unsure,
            };
            (*c, s)
        })
        .collect()
}

pub fn verify(task: &VerificationTask) -> Result<ScoreReport> {
    let s1 = filter_gradient_similarity(task)?;
    let s2 = filter_byclass_kmeans(task)?;
    Ok(ScoreReport {
        verifier: task.verifier,
        round: task.round,
        scores: combine_scores(&s1, &s2, &task.clients()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Each score replaced by a uniform draw from {0, ½, 1}.
    Random,
    /// 0 and 1 swapped, ½ kept.
    Reverse,
}

/// What a dishonest verifier submits instead of its honest report.
pub fn corrupt_report(report: &ScoreReport, mode: CorruptionMode, seed: u64) -> ScoreReport {
    let mut rng = seed::rng(seed);
    let scores = report
        .scores
        .iter()
        .map(|(c, s)| {
            let out = match mode {
                CorruptionMode::Random => Score::ALL[rng.random_range(0..3)],
                CorruptionMode::Reverse => match s {
                    Score::Malicious => Score::Benign,
                    Score::Benign => Score::Malicious,
                    Score::Unsure => Score::Unsure,
                },
            };
            (*c, out)
        })
        .collect();
    ScoreReport {
        verifier: report.verifier,
        round: report.round,
        scores,
    }
}

/// Give every verifier its own uniform `l`-subset of `set`, drawn
/// independently. Subsets come back sorted.
pub fn assign_clients_to_verifiers(
    set: &[ClientId],
    verifiers: &[ClientId],
    l: usize,
    seed: u64,
) -> Result<BTreeMap<ClientId, Vec<ClientId>>> {
    if l > set.len() {
        return Err(Error::domain(format!(
            "each verifier needs {l} clients but only {} need verification",
            set.len()
        )));
    }
    Ok(verifiers
        .iter()
        .map(|v| {
            let mut rng = seed::rng_for(seed, &format!("verifier:{v}"));
            let mut subset: Vec<ClientId> = index::sample(&mut rng, set.len(), l)
                .into_iter()
                .map(|i| set[i])
                .collect();
            subset.sort_unstable();
            (*v, subset)
        })
        .collect())
}
