use ndarray::{s, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::train::window_stats;
use super::ModelBundle;
use crate::autodiff::Matrix;
use crate::data::{inference_index_set, PriceFrame};
use crate::error::{Error, Result};
use crate::normalization::{denormalize_rows, normalize_rows, NormStats};
use crate::rng::{stream_rng, Stream};

/// Synthetic test-period paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// One `N x K` price matrix per draw; the first `h` columns copy the test frame.
    pub paths: Vec<Matrix>,
    /// Generator output before de-normalization, `N x (K - h)` per draw.
    pub normalized: Vec<Matrix>,
    /// Start offsets of the generated blocks.
    pub block_starts: Vec<usize>,
}

struct Block {
    start: usize,
    stats: Vec<NormStats>,
    code: Matrix,
}

/// Draws `n_draws` synthetic paths over `test_frame`. Every block is
/// conditioned on the real history preceding it, never on generated values.
/// Draw `k` uses its own random stream, so draws run in parallel and the
/// result does not depend on the thread count.
pub fn simulate(bundle: &ModelBundle, test_frame: &PriceFrame, n_draws: usize, seed: u64) -> Result<Simulation> {
    if !bundle.is_trained() {
        return Err(Error::invalid("bundle has not been trained"));
    }
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    let cfg = bundle.config();
    let (h, f, m) = (cfg.hist_len, cfg.future_len, cfg.latent_dim);
    let n = bundle.assets();
    if test_frame.n_assets() != n {
        return Err(Error::invalid(format!(
            "bundle was trained on {n} assets, test frame has {}",
            test_frame.n_assets()
        )));
    }
    let k = test_frame.n_days();
    let starts = inference_index_set(k, h, f)?;
    let a = test_frame.prices();

    // stats and condition codes do not depend on the draw
    let mut blocks = Vec::with_capacity(starts.len());
    for &i in &starts {
        let hist = a.slice(s![.., i - h..i]);
        let full = a.slice(s![.., i - h..i + f]);
        let stats = window_stats(cfg.regime(), bundle.proposer(), hist, Some(full), cfg.allow_forward_bias)?;
        let flat: Vec<f64> = normalize_rows(hist, &stats)?.into_iter().collect();
        let code = bundle.conditioner().infer(&Array2::from_shape_vec((1, n * h), flat).unwrap())?;
        blocks.push(Block { start: i, stats, code });
    }

    let draws: Vec<(Matrix, Matrix)> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = stream_rng(seed, Stream::Draw(d as u64));
            let mut path = Matrix::zeros((n, k));
            path.slice_mut(s![.., ..h]).assign(&a.slice(s![.., ..h]));
            let mut normalized = Matrix::zeros((n, k - h));
            for b in &blocks {
                let mut input = Matrix::zeros((1, m + b.code.ncols()));
                for j in 0..m {
                    input[[0, j]] = rng.sample(StandardNormal);
                }
                input.slice_mut(s![.., m..]).assign(&b.code);
                let out = bundle.simulator().infer(&input)?;
                let block = Array2::from_shape_vec((n, f), out.into_iter().collect()).unwrap();
                path.slice_mut(s![.., b.start..b.start + f])
                    .assign(&denormalize_rows(block.view(), &b.stats)?);
                normalized.slice_mut(s![.., b.start - h..b.start - h + f]).assign(&block);
            }
            Ok((path, normalized))
        })
        .collect::<Result<_>>()?;

    let (paths, normalized) = draws.into_iter().unzip();
    Ok(Simulation {
        paths,
        normalized,
        block_starts: starts,
    })
}

/// The synthetic `N x K` price matrices of [`simulate`].
pub fn simulate_paths(bundle: &ModelBundle, test_frame: &PriceFrame, n_draws: usize, seed: u64) -> Result<Vec<Matrix>> {
    Ok(simulate(bundle, test_frame, n_draws, seed)?.paths)
}
