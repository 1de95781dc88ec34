use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::TrainConfig;
use crate::autodiff::{Matrix, Tape};
use crate::data::{extract_window_from, training_index_set, PriceFrame};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, MlpNetwork, Mode, Role};
use crate::normalization::{fit_standard_rows, normalize_rows};
use crate::rng::{stream_rng, Stream};

/// Source of the per-asset center used by hybrid normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanProposer {
    Network(MlpNetwork),
    /// Returns the historical mean unchanged; hybrid normalization then
    /// coincides with the standard regime.
    CopyHistoricalMean,
}

/// Proposer input row: the standard-normalized history flattened asset-major,
/// followed by the raw historical means.
pub fn proposer_input(hist: ArrayView2<'_, f64>, mu: &[f64]) -> Result<Matrix> {
    Ok(proposer_features(hist, mu)?.0)
}

/// The input row and the per-asset historical 3-sigma scales.
fn proposer_features(hist: ArrayView2<'_, f64>, mu: &[f64]) -> Result<(Matrix, Vec<f64>)> {
    let (n, h) = hist.dim();
    if mu.len() != n {
        return Err(Error::invalid(format!("{} historical means for {n} assets", mu.len())));
    }
    let stats = fit_standard_rows(hist)?;
    let normalized = normalize_rows(hist, &stats)?;
    let mut row = Matrix::zeros((1, n * (h + 1)));
    for (k, v) in normalized.iter().enumerate() {
        row[[0, k]] = *v;
    }
    for (a, m) in mu.iter().enumerate() {
        row[[0, n * h + a]] = *m;
    }
    Ok((row, stats.iter().map(|s| s.scale).collect()))
}

/// `mu + scale * delta` per asset: the network output is the shift of the
/// window mean in units of the historical 3-sigma scale.
fn surrogate(mu: &[f64], scales: &[f64], delta: impl IntoIterator<Item = f64>) -> Vec<f64> {
    mu.iter().zip(scales).zip(delta).map(|((m, s), d)| m + s * d).collect()
}

/// Per-asset surrogate centers for a raw `N x h` history with means `mu`.
pub fn propose_mean(proposer: &MeanProposer, hist: ArrayView2<'_, f64>, mu: &[f64]) -> Result<Vec<f64>> {
    let out = match proposer {
        MeanProposer::CopyHistoricalMean => {
            if mu.len() != hist.nrows() {
                return Err(Error::invalid(format!("{} historical means for {} assets", mu.len(), hist.nrows())));
            }
            mu.to_vec()
        }
        MeanProposer::Network(net) => {
            let (x, scales) = proposer_features(hist, mu)?;
            surrogate(mu, &scales, net.infer(&x)?)
        }
    };
    if let Some(a) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("proposer output for asset {a} is not finite")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposerFit {
    pub network: MlpNetwork,
    /// MSE on the held-out windows, in squared price units.
    pub validation_mse: f64,
    pub train_windows: usize,
    pub holdout_windows: usize,
}

struct Examples {
    inputs: Matrix,
    targets: Matrix,
    means: Matrix,
    scales: Matrix,
}

fn rows_of(m: &Matrix, idx: &[usize]) -> Matrix {
    m.select(Axis(0), idx)
}

fn build_examples(frame: &PriceFrame, config: &TrainConfig) -> Result<Examples> {
    let (h, f) = (config.hist_len, config.future_len);
    let starts = training_index_set(frame.n_days(), config.window())?;
    let n = frame.n_assets();
    let mut inputs = Matrix::zeros((starts.len(), n * (h + 1)));
    let mut targets = Matrix::zeros((starts.len(), n));
    let mut means = Matrix::zeros((starts.len(), n));
    let mut scales = Matrix::zeros((starts.len(), n));
    for (r, &s) in starts.iter().enumerate() {
        let win = extract_window_from(frame.prices().view(), s, h, f)?;
        let mu: Vec<f64> = win.historical().rows().into_iter().map(|row| row.mean().unwrap()).collect();
        let (x, sc) = proposer_features(win.historical(), &mu)?;
        inputs.row_mut(r).assign(&x.row(0));
        for (a, row) in win.full().rows().into_iter().enumerate() {
            targets[[r, a]] = row.mean().unwrap();
            means[[r, a]] = mu[a];
            scales[[r, a]] = sc[a];
        }
    }
    Ok(Examples {
        inputs,
        targets,
        means,
        scales,
    })
}

/// Trains the mean proposer on every training window. The loss is the MSE
/// between the surrogate and the raw whole-window means; a seeded 10% (by
/// default) of windows is held out.
pub fn train_proposer(frame: &PriceFrame, config: &TrainConfig) -> Result<ProposerFit> {
    if !config.model_kind.is_hybrid() {
        return Err(Error::invalid(format!(
            "a proposer is only trained for hybrid kinds, not {}",
            config.model_kind
        )));
    }
    config.validate()?;
    let examples = build_examples(frame, config)?;
    let n_windows = examples.inputs.nrows();

    let mut order: Vec<usize> = (0..n_windows).collect();
    order.shuffle(&mut stream_rng(config.seed, Stream::Holdout));
    let (mut train_idx, mut hold_idx) = if n_windows < 2 {
        (order.clone(), order)
    } else {
        let n_hold = ((n_windows as f64 * config.holdout_fraction).ceil() as usize).clamp(1, n_windows - 1);
        let (hold, train) = order.split_at(n_hold);
        (train.to_vec(), hold.to_vec())
    };
    train_idx.sort_unstable();
    hold_idx.sort_unstable();

    let dims = config.net_dims(frame.n_assets());
    let role = Role::Proposer;
    let mut net = MlpNetwork::new(role, dims, config.seed, &mut stream_rng(config.seed, Stream::Init(role.index())))?;
    let mut adam = AdamState::new(config.proposer_adam(), net.tensors());
    let mut dropout = stream_rng(config.seed, Stream::Dropout(role.index()));
    let mut shuffle = stream_rng(config.seed, Stream::ProposerShuffle);

    let mut epoch_order = train_idx.clone();
    for epoch in 0..config.proposer_epochs() {
        epoch_order.shuffle(&mut shuffle);
        for chunk in epoch_order.chunks(config.batch_size) {
            let step = (|| {
                let grads = {
                    let tape = Tape::new();
                    let params = net.bind(&tape, true);
                    let x = tape.constant(rows_of(&examples.inputs, chunk));
                    let y = tape.constant(rows_of(&examples.targets, chunk));
                    let delta = net.forward(&params, x, &mut Mode::Train(&mut dropout))?;
                    let pred = delta
                        .mul(tape.constant(rows_of(&examples.scales, chunk)))?
                        .add(tape.constant(rows_of(&examples.means, chunk)))?;
                    let loss = pred.sub(y)?.square()?.mean()?;
                    tape.gradient_values(loss, &params)?
                };
                // the tape is gone, so the update happens in place
                adam_step(net.params_mut(), &grads, &mut adam)
            })();
            step.map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("proposer epoch {epoch}: {msg}")),
                other => other,
            })?;
        }
    }

    let delta = net.infer(&rows_of(&examples.inputs, &hold_idx))?;
    let pred = delta * rows_of(&examples.scales, &hold_idx) + rows_of(&examples.means, &hold_idx);
    let diff = pred - rows_of(&examples.targets, &hold_idx);
    let validation_mse = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
    log::info!(
        "proposer trained on {} windows, held-out MSE {validation_mse:.6}",
        train_idx.len()
    );
    Ok(ProposerFit {
        network: net,
        validation_mse,
        train_windows: train_idx.len(),
        holdout_windows: hold_idx.len(),
    })
}
