//! Conditional Wasserstein GANs over normalized price windows, with an
//! optional mean proposer that recenters the normalization (hybrid kinds).
//!
//! Window layout: an `N x w` block is flattened asset-major into one row, so a
//! batch of windows is a `B x (N*w)` matrix. The critic sees
//! `[flatten(X_h) | flatten(X_f)]` for real and generated windows alike.

mod persist;
mod proposer;
mod simulate;
mod steps;
mod train;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, MlpNetwork, NetDims, HYBRID_OUTPUT_SCALE};
use crate::normalization::NormRegime;

pub use persist::{load_bundle, read_bundle, save_bundle, write_bundle, BUNDLE_MAGIC};
pub use proposer::{propose_mean, proposer_input, train_proposer, MeanProposer, ProposerFit};
pub use simulate::{simulate, simulate_paths, Simulation};
pub use steps::{
    critic_losses, generate, generator_losses, gradient_penalty, Batch, Bound, CriticLoss, DropoutRngs, GanNets,
    GeneratorLoss,
};
pub use train::{train, train_with_proposer, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cgan,
    Acgan,
    HybridCgan,
    HybridAcgan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Cgan, ModelKind::Acgan, ModelKind::HybridCgan, ModelKind::HybridAcgan];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cgan => "cgan",
            ModelKind::Acgan => "acgan",
            ModelKind::HybridCgan => "hybrid_cgan",
            ModelKind::HybridAcgan => "hybrid_acgan",
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, ModelKind::HybridCgan | ModelKind::HybridAcgan)
    }

    /// Kinds that carry a decoder and the autoencoding penalty.
    pub fn uses_autoencoder(self) -> bool {
        matches!(self, ModelKind::Acgan | ModelKind::HybridAcgan)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model kind `{s}` (expected cgan, acgan, hybrid_cgan or hybrid_acgan)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub hist_len: usize,
    pub future_len: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub lambda1: f64,
    /// Ignored by kinds without a decoder.
    pub lambda2: f64,
    pub adam: AdamConfig,
    /// Learning rate for the proposer; `None` uses `adam.lr`.
    pub proposer_lr: Option<f64>,
    /// Proposer epochs; `None` uses `epochs`.
    pub proposer_epochs: Option<usize>,
    pub seed: u64,
    pub critic_steps_per_gen: usize,
    pub batch_size: usize,
    /// Fraction of training windows held out to score the proposer.
    pub holdout_fraction: f64,
    /// Output multiplier of the hybrid simulator.
    pub hybrid_output_scale: f64,
    /// Non-hybrid kinds only: center on the whole-window mean.
    pub eavesdrop: bool,
    pub allow_forward_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::Cgan,
            hist_len: 40,
            future_len: 20,
            latent_dim: 100,
            epochs: 1000,
            lambda1: 10.0,
            lambda2: 3.0,
            adam: AdamConfig::default(),
            proposer_lr: None,
            proposer_epochs: None,
            seed: 0,
            critic_steps_per_gen: 1,
            batch_size: 1,
            holdout_fraction: 0.1,
            hybrid_output_scale: HYBRID_OUTPUT_SCALE,
            eavesdrop: false,
            allow_forward_bias: false,
        }
    }
}

impl TrainConfig {
    pub fn window(&self) -> usize {
        self.hist_len + self.future_len
    }

    pub fn regime(&self) -> NormRegime {
        if self.model_kind.is_hybrid() {
            NormRegime::Hybrid
        } else if self.eavesdrop {
            NormRegime::Eavesdrop
        } else {
            NormRegime::Standard
        }
    }

    pub fn net_dims(&self, assets: usize) -> NetDims {
        NetDims {
            assets,
            hist_len: self.hist_len,
            future_len: self.future_len,
            latent_dim: self.latent_dim,
        }
    }

    pub fn proposer_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.proposer_lr.unwrap_or(self.adam.lr),
            ..self.adam
        }
    }

    pub fn proposer_epochs(&self) -> usize {
        self.proposer_epochs.unwrap_or(self.epochs)
    }

    /// The lambda2 actually applied: zero for kinds without a decoder.
    pub fn effective_lambda2(&self) -> f64 {
        if self.model_kind.uses_autoencoder() {
            self.lambda2
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hist_len", self.hist_len),
            ("future_len", self.future_len),
            ("latent_dim", self.latent_dim),
            ("epochs", self.epochs),
            ("critic_steps_per_gen", self.critic_steps_per_gen),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.hist_len < 2 {
            return Err(Error::invalid("hist_len must be at least 2"));
        }
        if self.proposer_epochs == Some(0) {
            return Err(Error::invalid("proposer_epochs must be at least 1"));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        for lr in [Some(self.adam.lr), self.proposer_lr].into_iter().flatten() {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
            }
        }
        for (name, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam.epsilon.is_finite() && self.adam.epsilon > 0.0) {
            return Err(Error::invalid("adam epsilon must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if !(self.hybrid_output_scale.is_finite() && self.hybrid_output_scale != 0.0) {
            return Err(Error::invalid("hybrid_output_scale must be finite and nonzero"));
        }
        if self.eavesdrop {
            if self.model_kind.is_hybrid() {
                return Err(Error::invalid("eavesdrop applies to cgan and acgan only"));
            }
            if !self.allow_forward_bias {
                return Err(Error::ForwardBias);
            }
        }
        Ok(())
    }

    /// Every field as `key = value` text; [`set`](Self::set) reads the same keys.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".to_string());
        vec![
            ("model_kind", self.model_kind.to_string()),
            ("hist_len", self.hist_len.to_string()),
            ("future_len", self.future_len.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("learning_rate", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_epsilon", self.adam.epsilon.to_string()),
            ("proposer_learning_rate", opt(self.proposer_lr.map(|v| v.to_string()))),
            ("proposer_epochs", opt(self.proposer_epochs.map(|v| v.to_string()))),
            ("seed", self.seed.to_string()),
            ("critic_steps_per_gen", self.critic_steps_per_gen.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("holdout_fraction", self.holdout_fraction.to_string()),
            ("hybrid_output_scale", self.hybrid_output_scale.to_string()),
            ("eavesdrop", self.eavesdrop.to_string()),
            ("allow_forward_bias", self.allow_forward_bias.to_string()),
        ]
    }

    /// Sets one field from text. Returns `Ok(false)` when `key` is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let value = value.trim();
        match key {
            "model_kind" => self.model_kind = value.parse()?,
            "hist_len" => self.hist_len = parse_value(key, value)?,
            "future_len" => self.future_len = parse_value(key, value)?,
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "lambda1" => self.lambda1 = parse_value(key, value)?,
            "lambda2" => self.lambda2 = parse_value(key, value)?,
            "learning_rate" => self.adam.lr = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "adam_epsilon" => self.adam.epsilon = parse_value(key, value)?,
            "proposer_learning_rate" => self.proposer_lr = parse_auto(key, value)?,
            "proposer_epochs" => self.proposer_epochs = parse_auto(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "critic_steps_per_gen" => self.critic_steps_per_gen = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "holdout_fraction" => self.holdout_fraction = parse_value(key, value)?,
            "hybrid_output_scale" => self.hybrid_output_scale = parse_value(key, value)?,
            "eavesdrop" => self.eavesdrop = parse_value(key, value)?,
            "allow_forward_bias" => self.allow_forward_bias = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses text written by [`to_text`](Self::to_text); unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`", lineno + 1)))?;
            if !cfg.set(k.trim(), v)? {
                return Err(Error::invalid(format!("line {}: unknown key `{}`", lineno + 1, k.trim())));
            }
        }
        Ok(cfg)
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

/// Per-epoch means of the step losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the maximized critic objective `D(real) - D(fake) - lambda1 * penalty`.
    pub critic_loss: f64,
    /// Mean of `-D(fake)`.
    pub generator_loss: f64,
    /// Mean reconstruction MSE before weighting; zero without a decoder.
    pub ap_loss: f64,
    /// Held-out proposer MSE; NaN for non-hybrid kinds.
    pub proposer_mse: f64,
}

pub fn write_training_log<W: Write>(out: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "critic_loss", "generator_loss", "ap_loss", "proposer_mse"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            r.critic_loss.to_string(),
            r.generator_loss.to_string(),
            r.ap_loss.to_string(),
            r.proposer_mse.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Archive(e.to_string()))?;
    Ok(())
}

/// Trained networks plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    config: TrainConfig,
    nets: GanNets,
    proposer: Option<MeanProposer>,
    training_log: Vec<EpochLog>,
}

impl ModelBundle {
    /// Assembles a bundle, checking that the components match the model kind.
    pub fn from_parts(
        config: TrainConfig,
        nets: GanNets,
        proposer: Option<MeanProposer>,
        training_log: Vec<EpochLog>,
    ) -> Result<Self> {
        config.validate()?;
        let kind = config.model_kind;
        if nets.decoder.is_some() != kind.uses_autoencoder() {
            return Err(Error::invalid(format!("decoder presence does not match model kind {kind}")));
        }
        if proposer.is_some() != kind.is_hybrid() {
            return Err(Error::invalid(format!("proposer presence does not match model kind {kind}")));
        }
        let dims = nets.conditioner.dims();
        let all_dims = [&nets.simulator, &nets.discriminator]
            .into_iter()
            .chain(nets.decoder.as_ref())
            .chain(match &proposer {
                Some(MeanProposer::Network(p)) => Some(p),
                _ => None,
            })
            .all(|n| n.dims() == dims);
        if !all_dims || dims != config.net_dims(dims.assets) {
            return Err(Error::invalid("bundle networks disagree on (N, h, f, m)"));
        }
        Ok(Self {
            config,
            nets,
            proposer,
            training_log,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model_kind(&self) -> ModelKind {
        self.config.model_kind
    }

    pub fn assets(&self) -> usize {
        self.nets.conditioner.dims().assets
    }

    pub fn nets(&self) -> &GanNets {
        &self.nets
    }

    pub fn conditioner(&self) -> &MlpNetwork {
        &self.nets.conditioner
    }

    pub fn decoder(&self) -> Option<&MlpNetwork> {
        self.nets.decoder.as_ref()
    }

    pub fn simulator(&self) -> &MlpNetwork {
        &self.nets.simulator
    }

    pub fn discriminator(&self) -> &MlpNetwork {
        &self.nets.discriminator
    }

    pub fn proposer(&self) -> Option<&MeanProposer> {
        self.proposer.as_ref()
    }

    pub fn training_log(&self) -> &[EpochLog] {
        &self.training_log
    }

    pub fn is_trained(&self) -> bool {
        !self.training_log.is_empty()
    }
}

#[cfg(test)]
mod tests;
