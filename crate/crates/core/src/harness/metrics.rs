use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::ledger::TrustLedger;
use crate::nn::ModelParams;
use crate::ClientId;

/// Trust below this marks a client as flagged for TPR/TNR.
pub const FLAG_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Main-task accuracy on the clean test set.
    pub ma: f64,
    /// Fraction of triggered test samples classified as the target.
    pub ba: f64,
    /// Flagged attackers / attackers in the queue; absent with no attackers queued.
    pub tpr: Option<f64>,
    /// Unflagged benign / benign in the queue; absent with no benign queued.
    pub tnr: Option<f64>,
    pub wall_time: f64,
}

/// Argmax accuracy; ties resolve to the lowest class index.
pub fn eval_ma(model: &ModelParams, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::domain("accuracy over an empty test set"));
    }
    let mut hits = 0usize;
    for s in test {
        if model.predict(&s.x)? == s.y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// Fraction of `triggered` predicted as `target`.
pub fn eval_ba(model: &ModelParams, triggered: &[Sample], target: usize) -> Result<f64> {
    if triggered.is_empty() {
        return Err(Error::domain("backdoor accuracy over an empty test set"));
    }
    let mut hits = 0usize;
    for s in triggered {
        if model.predict(&s.x)? == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / triggered.len() as f64)
}

/// Detection rates over the clients in the current queue. A client is
/// flagged when its trust is strictly below [`FLAG_THRESHOLD`].
pub fn eval_detection(
    queue: &[ClientId],
    ledger: &TrustLedger,
    attackers: &BTreeSet<ClientId>,
) -> Result<(Option<f64>, Option<f64>)> {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for c in queue {
        let flagged = ledger.trust(*c)? < FLAG_THRESHOLD;
        if attackers.contains(c) {
            pos += 1;
            tp += usize::from(flagged);
        } else {
            neg += 1;
            tn += usize::from(!flagged);
        }
    }
    let rate = |hit: usize, n: usize| (n > 0).then(|| hit as f64 / n as f64);
    Ok((rate(tp, pos), rate(tn, neg)))
}
