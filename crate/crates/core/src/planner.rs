//! Verifier coverage planning.
//!
//! `M` clients need checking; `V` verifiers each check a uniform random
//! `L`-subset. The closed forms below are inclusion-exclusion sums over the
//! set of clients nobody picked. They alternate in sign with terms as large
//! as `C(M, M/2)`, so they are evaluated in exact rational arithmetic and
//! only rounded to `f64` at the end.
//!
//! [`mc_coverage`] and [`mc_min_subset_size`] are independent Monte Carlo
//! estimates of the same quantities, used to cross-check the sums.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed;

/// Monte Carlo work is split into this many independently seeded shards.
pub const MC_SHARDS: u64 = 64;

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn binom_int(n: u64, k: u64) -> BigInt {
    BigInt::from(binomial(n, k))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// `P(some client is missed)` when each of `v` verifiers checks `l` of `m`:
/// `Σ_{s=1}^{m} (−1)^{s+1} C(m,s) [C(m−s,l)/C(m,l)]^v`.
pub fn miss_probability_exact(m: u64, l: u64, v: u64) -> BigRational {
    let denom = binom_int(m, l);
    if denom.is_zero() {
        return BigRational::one();
    }
    let mut acc = BigRational::zero();
    for s in 1..=m {
        let ratio = BigRational::new(binom_int(m - s, l), denom.clone());
        if ratio.is_zero() {
            break;
        }
        let term = BigRational::from_integer(binom_int(m, s)) * pow(&ratio, v);
        if s % 2 == 1 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

fn pow(base: &BigRational, exp: u64) -> BigRational {
    num_traits::pow::pow(base.clone(), exp as usize)
}

/// Probability that `v` verifiers checking `l` clients each cover all `m`.
pub fn coverage_probability(m: u64, l: u64, v: u64) -> f64 {
    to_f64(&(BigRational::one() - miss_probability_exact(m, l, v)))
}

fn check_ml(m: u64, l: u64) -> Result<()> {
    if m == 0 || l == 0 || l > m {
        return Err(Error::domain(format!("need 1 ≤ L ≤ M, got M={m}, L={l}")));
    }
    Ok(())
}

/// Per-verifier subset size expected to cover `m` clients with `v`
/// verifiers, evaluated as the double sum
/// `Σ_{l=1}^{M} Σ_{s=1}^{M} C(M,s)(−1)^{s+1}[C(M−s,l)/C(M,l)]^V`.
///
/// The outer sum starts at `l = 1`, so this equals
/// [`expected_min_subset_size`] minus one (the `l = 0` term, which is 1).
pub fn expected_l(m: u64, v: u64) -> Result<f64> {
    if m == 0 || v == 0 {
        return Err(Error::domain(format!("need M ≥ 1 and V ≥ 1, got M={m}, V={v}")));
    }
    let mut acc = BigRational::zero();
    for l in 1..=m {
        acc += miss_probability_exact(m, l, v);
    }
    Ok(to_f64(&acc))
}

/// Expected smallest `L` at which `v` verifiers cover `m` clients, each
/// verifier taking the first `L` entries of its own random ordering:
/// `Σ_{l=0}^{M−1} P(missed at l)`.
pub fn expected_min_subset_size(m: u64, v: u64) -> Result<f64> {
    if m == 0 || v == 0 {
        return Err(Error::domain(format!("need M ≥ 1 and V ≥ 1, got M={m}, V={v}")));
    }
    let mut acc = BigRational::zero();
    for l in 0..m {
        acc += miss_probability_exact(m, l, v);
    }
    Ok(to_f64(&acc))
}

/// Expected number of verifiers, each checking `l` clients, until all `m`
/// are covered:
/// `C(M,L) Σ_{s=1}^{M} (−1)^{s+1} C(M,s) / (C(M,L) − C(M−s,L))`.
pub fn expected_v(m: u64, l: u64) -> Result<f64> {
    check_ml(m, l)?;
    let total = binom_int(m, l);
    let mut acc = BigRational::zero();
    for s in 1..=m {
        let denom = &total - binom_int(m - s, l);
        if !denom.is_positive() {
            return Err(Error::numerical(format!(
                "zero denominator in coverage sum at s={s} (M={m}, L={l})"
            )));
        }
        let term = BigRational::new(binom_int(m, s), denom);
        if s % 2 == 1 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    Ok(to_f64(&(BigRational::from_integer(total) * acc)))
}

/// `n · H_n`, the classic coupon-collector expectation.
pub fn coupon_collector(n: u64) -> f64 {
    let h: BigRational = (1..=n)
        .map(|k| BigRational::new(BigInt::one(), BigInt::from(k)))
        .fold(BigRational::zero(), |a, b| a + b);
    to_f64(&(h * BigRational::from_integer(BigInt::from(n))))
}

/// Empirical distribution of the number of `l`-subsets needed to cover `m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCoverage {
    pub trials: u64,
    pub mean: f64,
    pub std_err: f64,
    /// `histogram[v]` = trials that needed exactly `v` draws.
    pub histogram: Vec<u64>,
}

impl McCoverage {
    /// Fraction of trials covered within `v` draws.
    pub fn p_covered_by(&self, v: usize) -> f64 {
        let hit: u64 = self.histogram.iter().take(v + 1).sum();
        hit as f64 / self.trials as f64
    }
}

#[derive(Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
    histogram: Vec<u64>,
}

impl Moments {
    fn push(&mut self, x: usize) {
        self.n += 1;
        self.sum += x as f64;
        self.sum_sq += (x * x) as f64;
        if self.histogram.len() <= x {
            self.histogram.resize(x + 1, 0);
        }
        self.histogram[x] += 1;
    }

    fn merge(mut self, other: Moments) -> Moments {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        if self.histogram.len() < other.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0);
        }
        for (a, b) in self.histogram.iter_mut().zip(other.histogram) {
            *a += b;
        }
        self
    }

    fn finish(self) -> McCoverage {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        McCoverage {
            trials: self.n,
            mean,
            std_err: (var / n).sqrt(),
            histogram: self.histogram,
        }
    }
}

/// Run `trials` sharded over [`MC_SHARDS`] seeded streams; the merge order is
/// fixed so the result does not depend on the thread count.
fn sharded(trials: u64, seed: u64, label: &str, trial: impl Fn(&mut seed::SimRng, &mut Vec<usize>) -> usize + Sync) -> McCoverage {
    let shards = MC_SHARDS.min(trials);
    let parts: Vec<Moments> = (0..shards)
        .into_par_iter()
        .map(|k| {
            let n = trials / shards + u64::from(k < trials % shards);
            let mut rng = seed::rng_for(seed, &format!("{label}:shard:{k}"));
            let mut scratch = Vec::new();
            let mut m = Moments::default();
            for _ in 0..n {
                m.push(trial(&mut rng, &mut scratch));
            }
            m
        })
        .collect();
    parts
        .into_iter()
        .fold(Moments::default(), Moments::merge)
        .finish()
}

/// Draw uniform `l`-subsets of `m` until every element has appeared;
/// record how many draws it took.
pub fn mc_coverage(m: usize, l: usize, trials: u64, seed: u64) -> Result<McCoverage> {
    check_ml(m as u64, l as u64)?;
    if trials == 0 {
        return Err(Error::domain("Monte Carlo needs at least one trial"));
    }
    Ok(sharded(trials, seed, "coverage", |rng, perm| {
        use rand::Rng;
        if perm.len() != m {
            *perm = (0..m).collect();
        }
        let mut seen = vec![false; m];
        let mut left = m;
        let mut draws = 0;
        while left > 0 {
            draws += 1;
            // partial Fisher-Yates: first l slots become a uniform l-subset
            for j in 0..l {
                let k = rng.random_range(j..m);
                perm.swap(j, k);
                let c = perm[j];
                if !seen[c] {
                    seen[c] = true;
                    left -= 1;
                }
            }
        }
        draws
    }))
}

/// Smallest per-verifier subset size covering `m` clients when each of `v`
/// verifiers reads a prefix of its own uniform random ordering.
pub fn mc_min_subset_size(m: usize, v: usize, trials: u64, seed: u64) -> Result<McCoverage> {
    if m == 0 || v == 0 {
        return Err(Error::domain(format!("need M ≥ 1 and V ≥ 1, got M={m}, V={v}")));
    }
    if trials == 0 {
        return Err(Error::domain("Monte Carlo needs at least one trial"));
    }
    Ok(sharded(trials, seed, "min_subset", |rng, first_seen| {
        use rand::seq::SliceRandom;
        first_seen.clear();
        first_seen.resize(m, usize::MAX);
        let mut perm: Vec<usize> = (0..m).collect();
        for _ in 0..v {
            perm.shuffle(rng);
            for (pos, c) in perm.iter().enumerate() {
                first_seen[*c] = first_seen[*c].min(pos + 1);
            }
        }
        first_seen.iter().copied().max().unwrap_or(0)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanTarget {
    /// Given `V`, how many clients per verifier.
    SubsetSize,
    /// Given `L`, how many verifiers.
    Verifiers,
}

/// Closed form next to its Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub target: PlanTarget,
    pub m: u64,
    pub given: u64,
    pub closed_form: f64,
    /// For [`PlanTarget::SubsetSize`], the expectation including the `l = 0`
    /// term the closed form omits; equal to `closed_form` otherwise.
    pub exact_expectation: f64,
    pub mc_mean: f64,
    pub mc_std_err: f64,
    pub trials: u64,
    /// `|closed_form − mc_mean| / mc_std_err`.
    pub z_score: f64,
}

impl CoverageReport {
    /// The closed form lies more than three standard errors from the estimate.
    pub fn discrepant(&self) -> bool {
        self.z_score > 3.0
    }

    pub fn render(&self) -> String {
        let what = match self.target {
            PlanTarget::SubsetSize => format!("E[L] for M={}, V={}", self.m, self.given),
            PlanTarget::Verifiers => format!("E[V] for M={}, L={}", self.m, self.given),
        };
        let mut out = format!(
            "{what}\n  closed form       {:.6}\n  monte carlo       {:.6} ± {:.6} (std err, {} trials)\n",
            self.closed_form, self.mc_mean, self.mc_std_err, self.trials
        );
        if self.target == PlanTarget::SubsetSize {
            out.push_str(&format!(
                "  with l=0 term     {:.6}\n",
                self.exact_expectation
            ));
        }
        if self.discrepant() {
            out.push_str(&format!(
                "  DISCREPANCY: closed form is {:.1} standard errors from the Monte Carlo estimate\n",
                self.z_score
            ));
        }
        out
    }
}

fn z(a: f64, b: f64, se: f64) -> f64 {
    if se > 0.0 {
        (a - b).abs() / se
    } else if a == b {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn plan_subset_size(m: u64, v: u64, trials: u64, seed: u64) -> Result<CoverageReport> {
    let closed_form = expected_l(m, v)?;
    let exact = expected_min_subset_size(m, v)?;
    let mc = mc_min_subset_size(m as usize, v as usize, trials, seed)?;
    Ok(CoverageReport {
        target: PlanTarget::SubsetSize,
        m,
        given: v,
        closed_form,
        exact_expectation: exact,
        mc_mean: mc.mean,
        mc_std_err: mc.std_err,
        trials,
        z_score: z(closed_form, mc.mean, mc.std_err),
    })
}

pub fn plan_verifiers(m: u64, l: u64, trials: u64, seed: u64) -> Result<CoverageReport> {
    let closed_form = expected_v(m, l)?;
    let mc = mc_coverage(m as usize, l as usize, trials, seed)?;
    Ok(CoverageReport {
        target: PlanTarget::Verifiers,
        m,
        given: l,
        closed_form,
        exact_expectation: closed_form,
        mc_mean: mc.mean,
        mc_std_err: mc.std_err,
        trials,
        z_score: z(closed_form, mc.mean, mc.std_err),
    })
}
