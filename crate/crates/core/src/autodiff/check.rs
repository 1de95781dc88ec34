use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Matrix, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub step: f64,
    /// Check at most this many randomly chosen entries per parameter tensor.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

/// Compares tape gradients of `f` against central differences.
///
/// Returns the largest elementwise relative error, with denominator
/// `max(|tape|, |fd|, 1e-8)`. `f` must be deterministic.
pub fn finite_difference_check<F>(f: F, params: &[Matrix], opts: &FdOptions) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads: Vec<Matrix> = tape
        .gradient(out, &vars, false)?
        .iter()
        .map(|g| (*g.value()).clone())
        .collect();

    let eval = |perturbed: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst = 0.0f64;
    for (k, param) in params.iter().enumerate() {
        let n = param.len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(max) if max < n => sample(&mut rng, n, max).into_vec(),
            _ => (0..n).collect(),
        };
        for flat in coords {
            let idx = (flat / param.ncols(), flat % param.ncols());
            let orig = param[idx];
            work[k][idx] = orig + opts.step;
            let up = eval(&work)?;
            work[k][idx] = orig - opts.step;
            let down = eval(&work)?;
            work[k][idx] = orig;
            let fd = (up - down) / (2.0 * opts.step);
            let tg = grads[k][idx];
            let rel = (tg - fd).abs() / tg.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
