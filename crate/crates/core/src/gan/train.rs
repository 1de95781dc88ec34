use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::proposer::{propose_mean, train_proposer, MeanProposer};
use super::steps::{critic_losses, generator_losses, Batch, DropoutRngs, GanNets};
use super::{CriticLoss, EpochLog, GeneratorLoss, ModelBundle, TrainConfig};
use crate::autodiff::{Matrix, Tape};
use crate::data::{extract_window_from, training_index_set, PriceFrame};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, LayerSpec, MlpNetwork, NetDims, Role};
use crate::normalization::{fit_eavesdrop_rows, fit_standard_rows, hybrid_rows, normalize_rows, NormRegime, NormStats};
use crate::rng::{stream_rng, Rng, Stream};

/// Normalization stats for one raw `N x w` window under `regime`.
pub(crate) fn window_stats(
    regime: NormRegime,
    proposer: Option<&MeanProposer>,
    hist: ndarray::ArrayView2<'_, f64>,
    full: Option<ndarray::ArrayView2<'_, f64>>,
    allow_forward_bias: bool,
) -> Result<Vec<NormStats>> {
    match regime {
        NormRegime::Standard => fit_standard_rows(hist),
        NormRegime::Eavesdrop => {
            let full = full.ok_or_else(|| Error::invalid("eavesdrop normalization needs the whole window"))?;
            fit_eavesdrop_rows(full, hist.ncols(), allow_forward_bias)
        }
        NormRegime::Hybrid => {
            let standard = fit_standard_rows(hist)?;
            let mu: Vec<f64> = standard.iter().map(|s| s.center).collect();
            let proposer = proposer.ok_or_else(|| Error::invalid("hybrid normalization needs a proposer"))?;
            let proposed = propose_mean(proposer, hist, &mu)?;
            hybrid_rows(&standard, &proposed)
        }
    }
}

fn init_net(config: &TrainConfig, role: Role, dims: NetDims) -> Result<MlpNetwork> {
    // both simulator variants draw from the same stream so their weights agree
    let stream_role = match role {
        Role::HybridSimulator => Role::Simulator,
        r => r,
    };
    let mut rng = stream_rng(config.seed, Stream::Init(stream_role.index()));
    let mut net = if role == Role::HybridSimulator {
        let mut layers = crate::nn::layer_stack(Role::Simulator, &dims);
        layers.push(LayerSpec::Scale(config.hybrid_output_scale));
        MlpNetwork::from_layers(role, dims, layers)?
    } else {
        MlpNetwork::build(role, dims)?
    };
    net.init_parameters(config.seed, &mut rng);
    Ok(net)
}

struct Optimizers {
    conditioner: AdamState,
    decoder: Option<AdamState>,
    simulator: AdamState,
    discriminator: AdamState,
}

/// Mutable training state: networks, optimizer moments, random streams and
/// the pre-normalized training windows.
pub struct Trainer {
    config: TrainConfig,
    nets: GanNets,
    proposer: Option<MeanProposer>,
    proposer_mse: f64,
    opt: Optimizers,
    dropout: DropoutRngs,
    latent: Rng,
    interpolation: Rng,
    shuffle: Rng,
    windows: Vec<Matrix>,
    log: Vec<EpochLog>,
}

impl Trainer {
    /// Prepares training on `frame`. Hybrid kinds train their proposer here
    /// unless one is supplied; it stays frozen afterwards.
    pub fn new(config: TrainConfig, frame: &PriceFrame, proposer: Option<MeanProposer>) -> Result<Self> {
        config.validate()?;
        let kind = config.model_kind;
        if !kind.is_hybrid() && proposer.is_some() {
            return Err(Error::invalid(format!("model kind {kind} takes no proposer")));
        }
        let starts = training_index_set(frame.n_days(), config.window())?;
        let dims = config.net_dims(frame.n_assets());

        let (proposer, proposer_mse) = match (kind.is_hybrid(), proposer) {
            (false, _) => (None, f64::NAN),
            (true, Some(p)) => (Some(p), f64::NAN),
            (true, None) => {
                let fit = train_proposer(frame, &config)?;
                (Some(MeanProposer::Network(fit.network)), fit.validation_mse)
            }
        };

        let regime = config.regime();
        let mut windows = Vec::with_capacity(starts.len());
        for &s in &starts {
            let win = extract_window_from(frame.prices().view(), s, config.hist_len, config.future_len)?;
            let stats = window_stats(
                regime,
                proposer.as_ref(),
                win.historical(),
                Some(win.full()),
                config.allow_forward_bias,
            )?;
            windows.push(normalize_rows(win.full(), &stats)?);
        }

        let simulator_role = if kind.is_hybrid() {
            Role::HybridSimulator
        } else {
            Role::Simulator
        };
        let nets = GanNets {
            conditioner: init_net(&config, Role::Conditioner, dims)?,
            decoder: if kind.uses_autoencoder() {
                Some(init_net(&config, Role::Decoder, dims)?)
            } else {
                None
            },
            simulator: init_net(&config, simulator_role, dims)?,
            discriminator: init_net(&config, Role::Discriminator, dims)?,
        };
        let opt = Optimizers {
            conditioner: AdamState::new(config.adam, nets.conditioner.tensors()),
            decoder: nets.decoder.as_ref().map(|d| AdamState::new(config.adam, d.tensors())),
            simulator: AdamState::new(config.adam, nets.simulator.tensors()),
            discriminator: AdamState::new(config.adam, nets.discriminator.tensors()),
        };
        let seed = config.seed;
        Ok(Self {
            config,
            nets,
            proposer,
            proposer_mse,
            opt,
            dropout: DropoutRngs::new(seed),
            latent: stream_rng(seed, Stream::Latent),
            interpolation: stream_rng(seed, Stream::Interpolation),
            shuffle: stream_rng(seed, Stream::Shuffle),
            windows,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn nets(&self) -> &GanNets {
        &self.nets
    }

    /// Normalized `N x w` training windows in index order.
    pub fn windows(&self) -> &[Matrix] {
        &self.windows
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    /// Adam steps taken so far by the generator side and by the critic.
    pub fn step_counts(&self) -> (u64, u64) {
        (self.opt.simulator.step_count, self.opt.discriminator.step_count)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut picked = Vec::with_capacity(indices.len());
        for &i in indices {
            picked.push(
                self.windows
                    .get(i)
                    .ok_or_else(|| Error::invalid(format!("window index {i} out of range")))?,
            );
        }
        Batch::from_windows(&picked, self.config.hist_len)
    }

    /// Standard-normal latent draws, one row per window.
    pub fn sample_latent(&mut self, rows: usize) -> Matrix {
        Matrix::from_shape_fn((rows, self.config.latent_dim), |_| self.latent.sample(StandardNormal))
    }

    /// One uniform interpolation weight per window.
    pub fn sample_eps(&mut self, rows: usize) -> Vec<f64> {
        (0..rows).map(|_| self.interpolation.random::<f64>()).collect()
    }

    /// One Adam step on the generator side: descends `-D(fake)` and, with a
    /// decoder, `lambda2 * AP`. The critic is left unchanged.
    pub fn generator_step(&mut self, batch: &Batch, z: &Matrix) -> Result<GeneratorLoss> {
        let (grads, parts, n_cond, n_sim) = {
            let tape = Tape::new();
            let bound = self.nets.bind(&tape, true, false);
            let lambda2 = self.config.effective_lambda2();
            let (loss, parts) = generator_losses(&tape, &self.nets, &bound, batch, z, lambda2, &mut self.dropout)?;
            let mut inputs = bound.conditioner.clone();
            inputs.extend(&bound.simulator);
            if let Some(d) = &bound.decoder {
                inputs.extend(d);
            }
            let grads = tape.gradient_values(loss, &inputs)?;
            (grads, parts, bound.conditioner.len(), bound.simulator.len())
        };
        let (g_cond, rest) = grads.split_at(n_cond);
        let (g_sim, g_dec) = rest.split_at(n_sim);

        adam_step(self.nets.conditioner.params_mut(), g_cond, &mut self.opt.conditioner)?;
        adam_step(self.nets.simulator.params_mut(), g_sim, &mut self.opt.simulator)?;
        if let (Some(dec), Some(state)) = (self.nets.decoder.as_mut(), self.opt.decoder.as_mut()) {
            adam_step(dec.params_mut(), g_dec, state)?;
        }
        Ok(parts)
    }

    /// One Adam step on the critic, ascending its objective. The generator
    /// side is left unchanged.
    pub fn critic_step(&mut self, batch: &Batch, z: &Matrix, eps: &[f64]) -> Result<CriticLoss> {
        let (grads, parts) = {
            let tape = Tape::new();
            let bound = self.nets.bind(&tape, false, true);
            let (objective, parts) = critic_losses(
                &tape,
                &self.nets,
                &bound,
                batch,
                z,
                eps,
                self.config.lambda1,
                &mut self.dropout,
            )?;
            (tape.gradient_values(objective.neg()?, &bound.discriminator)?, parts)
        };
        adam_step(self.nets.discriminator.params_mut(), &grads, &mut self.opt.discriminator)?;
        Ok(parts)
    }

    /// One pass over every training window in fresh random order.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.log.len();
        let mut order: Vec<usize> = (0..self.windows.len()).collect();
        order.shuffle(&mut self.shuffle);

        let (mut critic_sum, mut gen_sum, mut ap_sum) = (0.0, 0.0, 0.0);
        let (mut critic_n, mut gen_n) = (0usize, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let tag = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, window {}: {msg}", chunk[0])),
                other => other,
            };
            let batch = self.batch(chunk)?;
            let z = self.sample_latent(chunk.len());
            let g = self.generator_step(&batch, &z).map_err(tag)?;
            gen_sum += g.adversarial;
            ap_sum += g.ap;
            gen_n += 1;
            for _ in 0..self.config.critic_steps_per_gen {
                let eps = self.sample_eps(chunk.len());
                let c = self.critic_step(&batch, &z, &eps).map_err(tag)?;
                critic_sum += c.objective;
                critic_n += 1;
            }
        }
        let record = EpochLog {
            epoch,
            critic_loss: critic_sum / critic_n as f64,
            generator_loss: gen_sum / gen_n as f64,
            ap_loss: ap_sum / gen_n as f64,
            proposer_mse: self.proposer_mse,
        };
        if !(record.critic_loss.is_finite() && record.generator_loss.is_finite() && record.ap_loss.is_finite()) {
            return Err(Error::Numeric(format!("epoch {epoch}: mean loss is not finite")));
        }
        log::debug!(
            "epoch {epoch}: critic {:.5} generator {:.5} ap {:.5}",
            record.critic_loss,
            record.generator_loss,
            record.ap_loss
        );
        self.log.push(record);
        Ok(record)
    }

    pub fn into_bundle(self) -> Result<ModelBundle> {
        ModelBundle::from_parts(self.config, self.nets, self.proposer, self.log)
    }
}

/// Trains a bundle of `config.model_kind` on `frame` for `config.epochs` epochs.
pub fn train(frame: &PriceFrame, config: &TrainConfig) -> Result<ModelBundle> {
    train_with_proposer(frame, config, None)
}

/// As [`train`], with an optional fixed proposer for hybrid kinds.
pub fn train_with_proposer(
    frame: &PriceFrame,
    config: &TrainConfig,
    proposer: Option<MeanProposer>,
) -> Result<ModelBundle> {
    let mut trainer = Trainer::new(config.clone(), frame, proposer)?;
    log::info!(
        "training {} on {} windows for {} epochs",
        config.model_kind,
        trainer.windows().len(),
        config.epochs
    );
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    trainer.into_bundle()
}
