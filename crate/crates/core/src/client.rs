//! Client behaviour: benign local training and the compromised variants.

use serde::{Deserialize, Serialize};

use crate::data::{self, PoisonSpec, Sample};
use crate::error::{Error, Result};
use crate::ledger::Digest;
use crate::nn::{self, ModelParams, TrainConfig, UltimateGradient};
use crate::seed;
use crate::ClientId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackStrategy {
    None,
    /// Train on poisoned data, submit as-is.
    Blackbox,
    /// Poisoned training, then projection onto an L2 ball around the global model.
    Pgd { radius: f64 },
    /// Poisoned training, scale the update by `scale`, then project.
    PgdMr { scale: f64, radius: f64 },
}

impl AttackStrategy {
    pub fn is_attack(&self) -> bool {
        !matches!(self, AttackStrategy::None)
    }
}

#[derive(Debug, Clone)]
pub struct ClientProfile {
    pub id: ClientId,
    pub dataset: Vec<Sample>,
    pub attack: AttackStrategy,
    pub poison: Option<PoisonSpec>,
}

impl ClientProfile {
    pub fn benign(id: ClientId, dataset: Vec<Sample>) -> Self {
        Self {
            id,
            dataset,
            attack: AttackStrategy::None,
            poison: None,
        }
    }

    pub fn malicious(id: ClientId, dataset: Vec<Sample>, attack: AttackStrategy, poison: PoisonSpec) -> Self {
        Self {
            id,
            dataset,
            attack,
            poison: Some(poison),
        }
    }

    pub fn is_malicious(&self) -> bool {
        self.attack.is_attack()
    }

    pub fn data_size(&self) -> usize {
        self.dataset.len()
    }
}

/// One local model upload, as it sits in the contract's aggregation queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub client: ClientId,
    pub model: ModelParams,
    pub ug: UltimateGradient,
    pub data_size: usize,
    pub model_digest: Digest,
    pub round: u64,
}

impl Submission {
    /// Package a trained model; the digest and ultimate gradient are derived here
    /// so they can never disagree with the model.
    pub fn new(
        client: ClientId,
        round: u64,
        global: &ModelParams,
        model: ModelParams,
        data_size: usize,
        eta: f64,
    ) -> Result<Self> {
        let ug = nn::extract_ultimate_gradient(global, &model, eta)?.tagged(client, round);
        let model_digest = Digest::of(&model.canonical_bytes());
        Ok(Self {
            client,
            model,
            ug,
            data_size,
            model_digest,
            round,
        })
    }
}

/// Run one local round against the received global model.
pub fn local_round(
    profile: &ClientProfile,
    global: &ModelParams,
    cfg: &TrainConfig,
    round: u64,
) -> Result<Submission> {
    let local = local_model(profile, global, cfg)
        .map_err(|e| match e {
            Error::Numerical { context } => Error::numerical(format!(
                "round {round}, client {}: {context}",
                profile.id
            )),
            other => other,
        })?;
    Submission::new(
        profile.id,
        round,
        global,
        local,
        profile.data_size(),
        cfg.learning_rate.max(f64::MIN_POSITIVE),
    )
}

fn local_model(profile: &ClientProfile, global: &ModelParams, cfg: &TrainConfig) -> Result<ModelParams> {
    if profile.dataset.is_empty() {
        return Err(Error::domain(format!("client {} has no data", profile.id)));
    }
    let poisoned;
    let train_set: &[Sample] = match (&profile.attack, &profile.poison) {
        (AttackStrategy::None, _) => &profile.dataset,
        (_, Some(spec)) => {
            poisoned = data::poison(&profile.dataset, spec, seed::derive(cfg.seed, "poison"))?.0;
            &poisoned
        }
        (_, None) => {
            return Err(Error::Config(format!(
                "client {} attacks without a poison spec",
                profile.id
            )))
        }
    };
    let trained = nn::sgd_train(global, train_set, cfg)?;
    match profile.attack {
        AttackStrategy::None | AttackStrategy::Blackbox => Ok(trained),
        AttackStrategy::Pgd { radius } => pgd_project(&trained, global, radius),
        AttackStrategy::PgdMr { scale, radius } => {
            let replaced = model_replace(&trained, global, scale)?;
            pgd_project(&replaced, global, radius)
        }
    }
}

/// Project `local` onto the L2 ball of radius `radius` around `global`.
pub fn pgd_project(local: &ModelParams, global: &ModelParams, radius: f64) -> Result<ModelParams> {
    if !(radius > 0.0) {
        return Err(Error::domain(format!("projection radius must be positive, got {radius}")));
    }
    let diff = local.sub(global)?;
    let norm = diff.l2_norm();
    if norm <= radius {
        return Ok(local.clone());
    }
    let mut out = global.clone();
    out.add_scaled(radius / norm, &diff)?;
    Ok(out)
}

/// `global + scale · (local − global)`.
pub fn model_replace(local: &ModelParams, global: &ModelParams, scale: f64) -> Result<ModelParams> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::domain(format!("replacement scale must be finite and non-negative, got {scale}")));
    }
    let diff = local.sub(global)?;
    let mut out = global.clone();
    out.add_scaled(scale, &diff)?;
    Ok(out)
}
