//! Mean-variance inputs and the long-only maximum-Sharpe allocation.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::data::simple_returns;
use crate::error::{Error, Result};

/// Diagonal loading factor: `delta * trace(S) / N` is added to every variance.
pub const COVARIANCE_LOADING: f64 = 1e-4;
/// Floor applied to portfolio variance inside [`sharpe_ratio`].
pub const VARIANCE_FLOOR: f64 = 1e-16;
/// Optima whose Sharpe ratios differ by less than this are ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

const MAX_ITERS: usize = 20_000;
const STEP_TOL: f64 = 1e-15;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean_returns: Array1<f64>,
    pub covariance: Array2<f64>,
    pub sample_count: usize,
}

impl MomentEstimate {
    pub fn new(mean_returns: Array1<f64>, covariance: Array2<f64>, sample_count: usize) -> Result<Self> {
        let n = mean_returns.len();
        if n == 0 || covariance.dim() != (n, n) {
            return Err(Error::Shape {
                op: "moments",
                lhs: [n, 1],
                rhs: [covariance.nrows(), covariance.ncols()],
            });
        }
        if mean_returns.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("moment estimate contains non-finite values".into()));
        }
        Ok(Self {
            mean_returns,
            covariance,
            sample_count,
        })
    }

    pub fn assets(&self) -> usize {
        self.mean_returns.len()
    }
}

/// Long-only weights on the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Accepts weights within `1e-9` of the simplex, then clamps and renormalizes.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weight vector is empty"));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < -1e-9 || *w > 1.0 + 1e-9) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights {weights:?} are not on the simplex")));
        }
        Ok(Self::clean(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Indicator of asset `i` among `n`.
    pub fn vertex(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    fn clean(mut w: Vec<f64>) -> Self {
        for x in w.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
        let sum: f64 = w.iter().sum();
        if sum > 0.0 {
            w.iter_mut().for_each(|x| *x /= sum);
        }
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Row means and loaded sample covariance of an `N x T` return matrix.
pub fn estimate_moments(returns: ArrayView2<'_, f64>) -> Result<MomentEstimate> {
    let (n, t) = returns.dim();
    if t < 2 {
        return Err(Error::invalid(format!("moment estimation needs at least 2 observations, got {t}")));
    }
    if n == 0 {
        return Err(Error::invalid("moment estimation needs at least one asset"));
    }
    let mean = returns.mean_axis(Axis(1)).unwrap();
    let centered = &returns - &mean.view().insert_axis(Axis(1));
    let mut cov = centered.dot(&centered.t()) / (t as f64 - 1.0);
    // exact symmetry regardless of summation order
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    let loading = COVARIANCE_LOADING * cov.diag().sum() / n as f64;
    cov.diag_mut().mapv_inplace(|v| v + loading);
    MomentEstimate::new(mean, cov, t)
}

fn check_dims(v: &WeightVector, m: &MomentEstimate) -> Result<()> {
    if v.len() != m.assets() {
        return Err(Error::Shape {
            op: "portfolio weights",
            lhs: [v.len(), 1],
            rhs: [m.assets(), 1],
        });
    }
    Ok(())
}

fn quad(cov: &Array2<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += cov[[i, j]] * v[j];
        }
        s += v[i] * row;
    }
    s
}

fn lin(a: &Array1<f64>, v: &[f64]) -> f64 {
    a.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `(v'r, v'Sv)`.
pub fn portfolio_return_risk(v: &WeightVector, m: &MomentEstimate) -> Result<(f64, f64)> {
    check_dims(v, m)?;
    Ok((lin(&m.mean_returns, v.as_slice()), quad(&m.covariance, v.as_slice())))
}

/// `(v'r - r_f) / sqrt(v'Sv)` with the variance floored at [`VARIANCE_FLOOR`].
pub fn sharpe_ratio(v: &WeightVector, m: &MomentEstimate, r_f: f64) -> Result<f64> {
    let (ret, var) = portfolio_return_risk(v, m)?;
    if !var.is_finite() || var < -1e-12 {
        return Err(Error::Numeric(format!(
            "portfolio variance {var} is degenerate; raise the covariance loading (COVARIANCE_LOADING = {COVARIANCE_LOADING})"
        )));
    }
    Ok((ret - r_f) / var.max(VARIANCE_FLOOR).sqrt())
}

/// Euclidean projection onto the unit simplex (sort-based).
pub fn project_to_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projected gradient ascent with Armijo backtracking from `start`.
fn ascend(start: Vec<f64>, f: &dyn Fn(&[f64]) -> (f64, Vec<f64>)) -> (f64, Vec<f64>) {
    let mut v = start;
    let (mut fv, mut g) = f(&v);
    let mut t = 1.0;
    for _ in 0..MAX_ITERS {
        let mut accepted = false;
        while t > 1e-30 {
            let cand = project_to_simplex(&v.iter().zip(&g).map(|(x, d)| x + t * d).collect::<Vec<_>>());
            let step: Vec<f64> = cand.iter().zip(&v).map(|(c, x)| c - x).collect();
            let gain: f64 = step.iter().zip(&g).map(|(s, d)| s * d).sum();
            if step.iter().all(|s| s.abs() < STEP_TOL) {
                return (fv, v);
            }
            let (fc, gc) = f(&cand);
            if fc >= fv + ARMIJO * gain {
                v = cand;
                fv = fc;
                g = gc;
                t *= 2.0;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (fv, v)
}

fn pick_best(cands: Vec<(f64, Vec<f64>)>) -> Vec<f64> {
    let best = cands.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let n = cands[0].1.len();
    let u = 1.0 / n as f64;
    let dist = |v: &[f64]| v.iter().map(|x| (x - u) * (x - u)).sum::<f64>();
    cands
        .into_iter()
        .filter(|c| c.0 >= best - TIE_TOLERANCE * best.abs().max(1.0))
        .min_by(|a, b| dist(&a.1).total_cmp(&dist(&b.1)))
        .map(|c| c.1)
        .unwrap()
}

fn check_finite(m: &MomentEstimate, r_f: f64) -> Result<()> {
    if !r_f.is_finite() || m.mean_returns.iter().chain(m.covariance.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite moments or risk-free rate".into()));
    }
    Ok(())
}

/// Long-only minimum-variance weights.
pub fn min_variance_weights(m: &MomentEstimate) -> Result<WeightVector> {
    check_finite(m, 0.0)?;
    let cov = &m.covariance;
    let f = |v: &[f64]| {
        let sv = cov.dot(&Array1::from(v.to_vec()));
        (-lin(&sv, v), sv.iter().map(|x| -2.0 * x).collect())
    };
    let (_, v) = ascend(WeightVector::uniform(m.assets()).into_vec(), &f);
    Ok(WeightVector::clean(v))
}

/// Long-only weights maximizing the Sharpe ratio.
///
/// Multi-start projected gradient ascent from the uniform vector and every
/// vertex; ties within [`TIE_TOLERANCE`] go to the point closest to uniform.
/// When no asset beats `r_f` the minimum-variance point is returned instead.
pub fn max_sharpe_weights(m: &MomentEstimate, r_f: f64) -> Result<WeightVector> {
    check_finite(m, r_f)?;
    let n = m.assets();
    if m.mean_returns.iter().all(|&r| r <= r_f) {
        return min_variance_weights(m);
    }
    let excess = m.mean_returns.mapv(|r| r - r_f);
    let cov = &m.covariance;
    let f = |v: &[f64]| {
        let sv = cov.dot(&Array1::from(v.to_vec()));
        let var = lin(&sv, v).max(VARIANCE_FLOOR);
        let s = var.sqrt();
        let num = lin(&excess, v);
        let grad = excess.iter().zip(sv.iter()).map(|(e, q)| e / s - num * q / (s * var)).collect();
        (num / s, grad)
    };
    let starts = std::iter::once(WeightVector::uniform(n)).chain((0..n).map(|i| WeightVector::vertex(n, i)));
    let cands: Vec<(f64, Vec<f64>)> = starts.map(|s| ascend(s.into_vec(), &f)).collect();
    let best = WeightVector::clean(pick_best(cands));
    Ok(best)
}

/// Max-Sharpe weights estimated from an `N x h` block of past prices.
pub fn markowitz_weights(historical_prices: ArrayView2<'_, f64>, r_f: f64) -> Result<WeightVector> {
    if historical_prices.ncols() < 3 {
        return Err(Error::invalid(format!(
            "Markowitz weights need at least 3 prices per asset, got {}",
            historical_prices.ncols()
        )));
    }
    let returns = simple_returns(historical_prices)?;
    max_sharpe_weights(&estimate_moments(returns.view())?, r_f)
}
