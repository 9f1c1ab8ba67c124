use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::defense::CorruptionMode;
use crate::error::{Error, Result};
use crate::ledger::{Score, VerifierPolicy};
use crate::nn::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Blackbox,
    Pgd,
    PgdMr,
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "blackbox" => Ok(AttackKind::Blackbox),
            "pgd" => Ok(AttackKind::Pgd),
            "pgd_mr" => Ok(AttackKind::PgdMr),
            _ => Err(Error::Config(format!(
                "unknown attack {s:?} (expected none, blackbox, pgd or pgd_mr)"
            ))),
        }
    }
}

/// Every knob of one simulated run.
///
/// Config files are flat `key = value` lines; `#` starts a comment. Keys are
/// the field names below. Lists are comma-separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// N
    pub n_clients: usize,
    /// K: aggregation queue capacity, also clients sampled per round.
    pub queue_size: usize,
    /// M
    pub verify_set_size: usize,
    /// V
    pub verifiers: usize,
    /// L
    pub per_verifier: usize,
    /// T
    pub rounds: usize,
    /// Regenerate the verification set every this many rounds.
    pub verify_refresh: usize,
    /// Apply each round's scores one round later.
    pub verify_lag: bool,

    /// ε
    pub attacker_ratio: f64,
    pub attack: AttackKind,
    pub pdr: f64,
    pub target_class: usize,
    pub trigger_coords: Vec<usize>,
    pub trigger_value: f64,
    pub edge_case: bool,
    /// PGD radius; measured from benign updates when unset.
    pub pgd_radius: Option<f64>,
    /// Model-replacement scale γ; defaults to K.
    pub replace_scale: Option<f64>,

    pub defense: bool,
    pub verifier_policy: VerifierPolicy,
    pub bad_verifier_fraction: f64,
    pub bad_verifier_mode: CorruptionMode,
    /// Diagnostic: replace every honest verification score with this value.
    pub score_override: Option<Score>,

    /// φ
    pub non_iid: f64,
    pub samples_per_client: usize,
    pub test_size: usize,
    pub features: usize,
    pub classes: usize,
    pub data_csv: Option<PathBuf>,

    pub hidden: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,

    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_clients: 40,
            queue_size: 10,
            verify_set_size: 10,
            verifiers: 5,
            per_verifier: 4,
            rounds: 100,
            verify_refresh: 1,
            verify_lag: false,
            attacker_ratio: 0.25,
            attack: AttackKind::Blackbox,
            pdr: 0.33,
            target_class: 0,
            trigger_coords: vec![17, 18, 19],
            trigger_value: 3.0,
            edge_case: false,
            pgd_radius: None,
            replace_scale: None,
            defense: true,
            verifier_policy: VerifierPolicy::Open,
            bad_verifier_fraction: 0.0,
            bad_verifier_mode: CorruptionMode::Reverse,
            score_override: None,
            non_iid: 0.5,
            samples_per_client: 200,
            test_size: 2000,
            features: 20,
            classes: 5,
            data_csv: None,
            hidden: 32,
            learning_rate: 0.05,
            local_epochs: 2,
            batch_size: 20,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() || value == "auto" || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl SimConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Parse `key = value` lines on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_clients" => self.n_clients = parse(key, value)?,
            "queue_size" => self.queue_size = parse(key, value)?,
            "verify_set_size" => self.verify_set_size = parse(key, value)?,
            "verifiers" => self.verifiers = parse(key, value)?,
            "per_verifier" => self.per_verifier = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "verify_refresh" => self.verify_refresh = parse(key, value)?,
            "verify_lag" => self.verify_lag = parse_bool(key, value)?,
            "attacker_ratio" => self.attacker_ratio = parse(key, value)?,
            "attack" => self.attack = value.parse()?,
            "pdr" => self.pdr = parse(key, value)?,
            "target_class" => self.target_class = parse(key, value)?,
            "trigger_coords" => {
                self.trigger_coords = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "trigger_value" => self.trigger_value = parse(key, value)?,
            "edge_case" => self.edge_case = parse_bool(key, value)?,
            "pgd_radius" => self.pgd_radius = optional(key, value)?,
            "replace_scale" => self.replace_scale = optional(key, value)?,
            "defense" => self.defense = parse_bool(key, value)?,
            "verifier_policy" => {
                self.verifier_policy = match value {
                    "open" => VerifierPolicy::Open,
                    "caav" => VerifierPolicy::Caav,
                    _ => return Err(Error::Config(format!("{key}: expected open or caav, got {value:?}"))),
                }
            }
            "bad_verifier_fraction" => self.bad_verifier_fraction = parse(key, value)?,
            "bad_verifier_mode" => {
                self.bad_verifier_mode = match value {
                    "random" => CorruptionMode::Random,
                    "reverse" => CorruptionMode::Reverse,
                    _ => return Err(Error::Config(format!("{key}: expected random or reverse, got {value:?}"))),
                }
            }
            "score_override" => {
                self.score_override = match optional::<f64>(key, value)? {
                    None => None,
                    Some(v) => Some(Score::from_value(v).map_err(|e| Error::Config(format!("{key}: {e}")))?),
                }
            }
            "non_iid" => self.non_iid = parse(key, value)?,
            "samples_per_client" => self.samples_per_client = parse(key, value)?,
            "test_size" => self.test_size = parse(key, value)?,
            "features" => self.features = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "data_csv" => self.data_csv = optional::<PathBuf>(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_clients == 0 || self.queue_size == 0 || self.rounds == 0 {
            return fail("n_clients, queue_size and rounds must be positive".into());
        }
        if self.queue_size > self.n_clients {
            return fail(format!("queue_size {} exceeds n_clients {}", self.queue_size, self.n_clients));
        }
        if self.verify_set_size > self.n_clients {
            return fail(format!(
                "verify_set_size {} exceeds n_clients {}",
                self.verify_set_size, self.n_clients
            ));
        }
        if self.per_verifier > self.verify_set_size {
            return fail(format!(
                "per_verifier {} exceeds verify_set_size {}",
                self.per_verifier, self.verify_set_size
            ));
        }
        if self.defense && (self.verifiers == 0 || self.per_verifier < 2) {
            return fail("the defense needs at least one verifier checking at least 2 clients".into());
        }
        if self.verify_refresh == 0 {
            return fail("verify_refresh must be positive".into());
        }
        for (name, v) in [
            ("attacker_ratio", self.attacker_ratio),
            ("pdr", self.pdr),
            ("non_iid", self.non_iid),
            ("bad_verifier_fraction", self.bad_verifier_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0,1], got {v}"));
            }
        }
        if self.attack != AttackKind::None && self.attacker_ratio > 0.0 && self.trigger_coords.is_empty() {
            return fail("an attack needs trigger_coords".into());
        }
        if self.data_csv.is_none() {
            if self.features == 0 || self.classes < 2 {
                return fail("need at least one feature and two classes".into());
            }
            if let Some(c) = self.trigger_coords.iter().find(|c| **c >= self.features) {
                return fail(format!("trigger coordinate {c} outside {} features", self.features));
            }
            if self.target_class >= self.classes {
                return fail(format!("target_class {} outside {} classes", self.target_class, self.classes));
            }
        }
        if self.samples_per_client == 0 || self.test_size == 0 || self.hidden == 0 {
            return fail("samples_per_client, test_size and hidden must be positive".into());
        }
        if let Some(r) = self.pgd_radius {
            if !(r > 0.0) {
                return fail(format!("pgd_radius must be positive, got {r}"));
            }
        }
        if let Some(g) = self.replace_scale {
            if !(g > 0.0) {
                return fail(format!("replace_scale must be positive, got {g}"));
            }
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        self.train_config(0).validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            seed,
        }
    }

    pub fn num_attackers(&self) -> usize {
        if self.attack == AttackKind::None {
            0
        } else {
            (self.attacker_ratio * self.n_clients as f64).round() as usize
        }
    }
}
