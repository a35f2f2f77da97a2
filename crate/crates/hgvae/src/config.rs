//! Run configuration: namespaced keys, JSON load/merge, and hashing.
//!
//! The file format is a single JSON object with one sub-object per
//! namespace (`mask`, `model`, `vi`, `pnsg`, `loss`, `train`). Command-line
//! flags override file values; the fully resolved config is echoed into the
//! output directory so a run can be reproduced from it alone.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Fraction of target nodes masked each epoch.
    pub rate: f64,
    /// Optional final rate for a linear schedule across epochs.
    pub rate_final: Option<f64>,
    /// Optional dedicated seed for the masking stream (defaults to the
    /// training seed).
    pub seed_stream: Option<u64>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            rate: 0.5,
            rate_final: None,
            seed_stream: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub activation: String,
    /// Hidden width of the semantic-attention scorer.
    pub semantic_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 256,
            heads: 1,
            dropout: 0.5,
            activation: "elu".to_string(),
            semantic_dim: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViConfig {
    pub norm_eps: f64,
    /// log-variance is clamped to [-logvar_clamp, logvar_clamp].
    pub logvar_clamp: f64,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            norm_eps: 1e-5,
            logvar_clamp: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnsgConfig {
    /// Mean shift coefficient for variational negatives.
    pub kappa: f64,
    pub num_negatives: usize,
    /// Dropout rate applied to sampled anchor rows.
    pub dropout_rate: f64,
    /// pnsg | noise | dropout_only | vi_only | unshifted
    pub mode: String,
}

impl Default for PnsgConfig {
    fn default() -> Self {
        PnsgConfig {
            kappa: 2.0,
            num_negatives: 20,
            dropout_rate: 0.2,
            mode: "pnsg".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub delta: f64,
    /// focal | literal
    pub esce_variant: String,
    pub denominator_includes_positive: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            tau: 0.5,
            delta: 3.0,
            esce_variant: "focal".to_string(),
            denominator_includes_positive: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Early stopping on validation micro-F1; disabled when None.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 5e-4,
            seed: 0,
            checkpoint_every: 50,
            early_stop_patience: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mask: MaskConfig,
    pub model: ModelConfig,
    pub vi: ViConfig,
    pub pnsg: PnsgConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.mask.rate) {
            return fail(format!("mask.rate {} outside [0, 1]", self.mask.rate));
        }
        if let Some(rf) = self.mask.rate_final {
            if !(0.0..=1.0).contains(&rf) {
                return fail(format!("mask.rate_final {rf} outside [0, 1]"));
            }
        }
        if self.model.hidden_dim == 0 || self.model.heads == 0 {
            return fail("model.hidden_dim and model.heads must be >= 1".into());
        }
        if self.model.hidden_dim % self.model.heads != 0 {
            return fail(format!(
                "model.hidden_dim {} not divisible by model.heads {}",
                self.model.hidden_dim, self.model.heads
            ));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return fail(format!("model.dropout {} outside [0, 1)", self.model.dropout));
        }
        crate::han::Activation::parse(&self.model.activation)?;
        crate::pnsg::NegativeMode::parse(&self.pnsg.mode)?;
        crate::loss::EsceVariant::parse(&self.loss.esce_variant)?;
        if self.pnsg.num_negatives == 0 {
            return fail("pnsg.num_negatives must be >= 1".into());
        }
        if !(self.pnsg.dropout_rate > 0.0 && self.pnsg.dropout_rate < 1.0) {
            return fail(format!(
                "pnsg.dropout_rate {} outside (0, 1)",
                self.pnsg.dropout_rate
            ));
        }
        if self.loss.tau <= 0.0 {
            return fail(format!("loss.tau {} must be > 0", self.loss.tau));
        }
        if self.loss.delta < 1.0 {
            return fail(format!("loss.delta {} must be >= 1", self.loss.delta));
        }
        if [self.loss.alpha, self.loss.beta, self.loss.gamma]
            .iter()
            .any(|w| *w < 0.0)
        {
            return fail("loss weights must be >= 0".into());
        }
        if self.train.epochs == 0 {
            return fail("train.epochs must be >= 1".into());
        }
        if self.train.lr <= 0.0 {
            return fail(format!("train.lr {} must be > 0", self.train.lr));
        }
        if self.train.checkpoint_every == 0 {
            return fail("train.checkpoint_every must be >= 1".into());
        }
        Ok(())
    }

    /// Apply a dotted-key override like `loss.tau=0.3`.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{spec}' is not of the form key=value"))
        })?;
        let mut json = serde_json::to_value(&*self).expect("config serializes");
        let mut cursor = &mut json;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cursor = cursor
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config namespace '{part}'")))?;
        }
        let leaf = parts.last().unwrap();
        let slot = cursor
            .get_mut(*leaf)
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        let parsed: serde_json::Value = match slot {
            serde_json::Value::String(_) => serde_json::Value::String(value.to_string()),
            _ => serde_json::from_str(value)
                .map_err(|e| Error::Config(format!("value for '{key}': {e}")))?,
        };
        *slot = parsed;
        *self = serde_json::from_value(json)
            .map_err(|e| Error::Config(format!("override '{spec}': {e}")))?;
        self.validate()
    }

    /// Canonical JSON of the resolved config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed of the masking stream.
    pub fn mask_seed(&self) -> u64 {
        self.mask.seed_stream.unwrap_or(self.train.seed)
    }
}
