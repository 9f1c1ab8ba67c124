//! Synthetic Gaussian-cluster data, non-IID client partitioning, and
//! coordinate-clamp backdoor triggers.

use std::path::Path;

use rand::seq::index;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Distance between neighbouring class means, in units of the per-coordinate
/// standard deviation. 4.0 keeps the Bayes error for 5 classes under 1%.
pub const CLASS_SEPARATION: f64 = 4.0;

/// Class-balanced samples from `classes` unit-variance Gaussian clusters.
///
/// Class `c` is centred at `CLASS_SEPARATION · e_c` when `classes ≤ dims`;
/// with more classes than dimensions the centres are seeded random directions
/// of the same length.
pub fn gen_dataset(n: usize, classes: usize, dims: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 || classes == 0 || dims == 0 {
        return Err(Error::domain(format!(
            "gen_dataset needs positive n, classes and dims (got {n}, {classes}, {dims})"
        )));
    }
    let mut rng = seed::rng(seed);
    let means = class_means(classes, dims, &mut rng);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    Ok(labels
        .into_iter()
        .map(|y| {
            let x = means[y]
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect();
            Sample { x, y }
        })
        .collect())
}

fn class_means(classes: usize, dims: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            if classes <= dims {
                let mut m = vec![0.0; dims];
                m[c] = CLASS_SEPARATION;
                m
            } else {
                let v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut *rng)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|a| a * CLASS_SEPARATION / norm).collect()
            }
        })
        .collect()
}

pub fn num_classes(data: &[Sample]) -> usize {
    data.iter().map(|s| s.y + 1).max().unwrap_or(0)
}

pub fn class_histogram(data: &[Sample], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for s in data {
        h[s.y] += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n_clients: usize,
    /// Fraction of each client's data drawn from its dominant class.
    pub non_iid: f64,
    pub per_client_size: usize,
    pub seed: u64,
}

/// Split `data` across clients. Client `i` has dominant class `i mod l`; a
/// fraction `non_iid` of its samples comes from that class and the rest from
/// a uniformly chosen class per draw. Draws are without replacement.
pub fn partition_non_iid(data: &[Sample], spec: &PartitionSpec) -> Result<Vec<Vec<Sample>>> {
    if !(0.0..=1.0).contains(&spec.non_iid) {
        return Err(Error::domain(format!(
            "non-IID degree must lie in [0,1], got {}",
            spec.non_iid
        )));
    }
    if spec.n_clients == 0 || spec.per_client_size == 0 {
        return Err(Error::domain("partition needs positive client count and size"));
    }
    let needed = spec.n_clients * spec.per_client_size;
    if data.len() < needed {
        return Err(Error::domain(format!(
            "partition needs {needed} samples, dataset has {}",
            data.len()
        )));
    }
    let classes = num_classes(data);
    let mut rng = seed::rng(spec.seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in data.iter().enumerate() {
        pools[s.y].push(i);
    }
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    let n_dominant = (spec.non_iid * spec.per_client_size as f64).round() as usize;
    let mut clients = Vec::with_capacity(spec.n_clients);
    for i in 0..spec.n_clients {
        let dominant = i % classes;
        let mut local = Vec::with_capacity(spec.per_client_size);
        for _ in 0..n_dominant {
            let idx = pools[dominant].pop().ok_or_else(|| {
                Error::domain(format!("class {dominant} exhausted while filling client {i}"))
            })?;
            local.push(data[idx].clone());
        }
        for _ in n_dominant..spec.per_client_size {
            let open: Vec<usize> = (0..classes).filter(|c| !pools[*c].is_empty()).collect();
            let c = *open
                .choose(&mut rng)
                .ok_or_else(|| Error::domain(format!("dataset exhausted while filling client {i}")))?;
            let idx = pools[c].pop().expect("class pool checked non-empty");
            local.push(data[idx].clone());
        }
        local.shuffle(&mut rng);
        clients.push(local);
    }
    Ok(clients)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub target_class: usize,
    pub trigger_coords: Vec<usize>,
    pub trigger_value: f64,
    /// Poisoned data rate.
    pub pdr: f64,
    /// Prefer samples in the tail of their class distribution.
    #[serde(default)]
    pub edge_case: bool,
}

impl PoisonSpec {
    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.trigger_coords.is_empty() {
            return Err(Error::domain("trigger needs at least one coordinate"));
        }
        if let Some(c) = self.trigger_coords.iter().find(|c| **c >= dims) {
            return Err(Error::domain(format!(
                "trigger coordinate {c} outside {dims} features"
            )));
        }
        if !(0.0..=1.0).contains(&self.pdr) {
            return Err(Error::domain(format!("PDR must lie in [0,1], got {}", self.pdr)));
        }
        if !self.trigger_value.is_finite() {
            return Err(Error::domain("trigger value must be finite"));
        }
        Ok(())
    }

    pub fn apply_trigger(&self, x: &mut [f64]) {
        for &c in &self.trigger_coords {
            x[c] = self.trigger_value;
        }
    }

    pub fn poisoned_count(&self, n: usize) -> usize {
        // guard against 0.33 * 100 landing a hair above 33
        ((self.pdr * n as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Trigger and relabel exactly `⌈pdr·n⌉` samples chosen uniformly (or from
/// the class-distribution tail first when `edge_case` is set). Returns the
/// poisoned set and a per-sample flag.
pub fn poison(data: &[Sample], spec: &PoisonSpec, seed: u64) -> Result<(Vec<Sample>, Vec<bool>)> {
    let dims = data.first().map_or(usize::MAX, |s| s.x.len());
    spec.validate(dims)?;
    let n = data.len();
    let k = spec.poisoned_count(n);
    let mut rng = seed::rng(seed);
    let chosen: Vec<usize> = if spec.edge_case {
        let tail = tail_indices(data);
        let mut picked: Vec<usize> = if tail.len() >= k {
            index::sample(&mut rng, tail.len(), k).into_iter().map(|i| tail[i]).collect()
        } else {
            tail.clone()
        };
        if picked.len() < k {
            let rest: Vec<usize> = (0..n).filter(|i| !tail.contains(i)).collect();
            let extra = index::sample(&mut rng, rest.len(), k - picked.len());
            picked.extend(extra.into_iter().map(|i| rest[i]));
        }
        picked
    } else {
        index::sample(&mut rng, n, k).into_vec()
    };
    let mut out = data.to_vec();
    let mut flags = vec![false; n];
    for i in chosen {
        spec.apply_trigger(&mut out[i].x);
        out[i].y = spec.target_class;
        flags[i] = true;
    }
    Ok((out, flags))
}

/// Samples whose distance to their empirical class mean exceeds the class's
/// mean distance by more than two standard deviations.
pub fn tail_indices(data: &[Sample]) -> Vec<usize> {
    let classes = num_classes(data);
    let Some(dims) = data.first().map(|s| s.x.len()) else {
        return Vec::new();
    };
    let mut means = vec![vec![0.0; dims]; classes];
    let mut counts = vec![0usize; classes];
    for s in data {
        counts[s.y] += 1;
        for (m, v) in means[s.y].iter_mut().zip(&s.x) {
            *m += v;
        }
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= (*c).max(1) as f64;
        }
    }
    let dist: Vec<f64> = data
        .iter()
        .map(|s| {
            s.x.iter()
                .zip(&means[s.y])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut stats = vec![(0.0, 0.0); classes];
    for (s, d) in data.iter().zip(&dist) {
        stats[s.y].0 += d;
        stats[s.y].1 += d * d;
    }
    let cut: Vec<f64> = stats
        .iter()
        .zip(&counts)
        .map(|(&(sum, sq), &c)| {
            let c = c.max(1) as f64;
            let mean = sum / c;
            let var = (sq / c - mean * mean).max(0.0);
            mean + 2.0 * var.sqrt()
        })
        .collect();
    data.iter()
        .zip(&dist)
        .enumerate()
        .filter(|(_, (s, d))| **d > cut[s.y])
        .map(|(i, _)| i)
        .collect()
}

/// Every clean sample not already of the target class, with the trigger
/// applied and relabelled to the target. Used only to measure backdoor
/// accuracy.
pub fn triggered_testset(clean: &[Sample], spec: &PoisonSpec) -> Vec<Sample> {
    clean
        .iter()
        .filter(|s| s.y != spec.target_class)
        .map(|s| {
            let mut t = s.clone();
            spec.apply_trigger(&mut t.x);
            t.y = spec.target_class;
            t
        })
        .collect()
}

/// Load `d` feature columns followed by an integer label per row. No header.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    let mut width = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::domain(format!("row {line}: need features and a label")));
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::domain(format!("row {line}: ragged row")));
        }
        let parse = |f: &str| {
            f.parse::<f64>()
                .map_err(|e| Error::domain(format!("row {line}: bad number {f:?}: {e}")))
        };
        let x = rec
            .iter()
            .take(rec.len() - 1)
            .map(parse)
            .collect::<Result<Vec<f64>>>()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("row {line}: non-finite feature")));
        }
        let label = &rec[rec.len() - 1];
        let y = label
            .parse::<usize>()
            .map_err(|e| Error::domain(format!("row {line}: bad label {label:?}: {e}")))?;
        out.push(Sample { x, y });
    }
    if out.is_empty() {
        return Err(Error::domain("CSV file holds no samples"));
    }
    Ok(out)
}
