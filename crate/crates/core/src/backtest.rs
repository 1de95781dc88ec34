//! Rebalancing backtests of max-Sharpe schedules on real test prices.
//!
//! Rebalance offsets are `h, h + eta, ...` while at least one holding day
//! remains. A GAN draw decides the weights at offset `t` from the generated
//! block containing `t`; that block was conditioned only on real prices
//! before its start, so the decision never sees day `t` or later.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{s, ArrayView2};
use rayon::prelude::*;

use crate::autodiff::Matrix;
use crate::data::{simple_returns, PriceFrame, DATE_FORMAT};
use crate::error::{Error, Result};
use crate::gan::{simulate_paths, ModelBundle};
use crate::portfolio::{estimate_moments, markowitz_weights, max_sharpe_weights, WeightVector};

pub const TRADING_DAYS: f64 = 252.0;
/// Synthetic paths drawn per GAN experiment unless configured otherwise.
pub const DEFAULT_N_DRAWS: usize = 1000;
pub const DEFAULT_RISK_FREE_RATE: f64 = 0.0;

/// Named rebalance periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebalanceSetting {
    Defensive,
    Balanced,
    Aggressive,
}

impl RebalanceSetting {
    pub const ALL: [RebalanceSetting; 3] = [Self::Defensive, Self::Balanced, Self::Aggressive];

    pub fn eta(self) -> usize {
        match self {
            Self::Defensive => 10,
            Self::Balanced => 15,
            Self::Aggressive => 20,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Defensive => "defensive",
            Self::Balanced => "balanced",
            Self::Aggressive => "aggressive",
        }
    }
}

impl fmt::Display for RebalanceSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RebalanceSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown rebalance setting `{s}` (defensive, balanced, aggressive)")))
    }
}

/// Weights to hold from each rebalance offset until the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    rebalance_indices: Vec<usize>,
    weights: Vec<WeightVector>,
}

impl WeightSchedule {
    pub fn new(rebalance_indices: Vec<usize>, weights: Vec<WeightVector>) -> Result<Self> {
        if rebalance_indices.is_empty() || rebalance_indices.len() != weights.len() {
            return Err(Error::invalid(format!(
                "schedule needs one weight vector per rebalance index ({} indices, {} vectors)",
                rebalance_indices.len(),
                weights.len()
            )));
        }
        if rebalance_indices.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::invalid("rebalance indices must be strictly increasing"));
        }
        if rebalance_indices.windows(3).any(|p| p[2] - p[1] != p[1] - p[0]) {
            return Err(Error::invalid("rebalance indices must be evenly spaced"));
        }
        let n = weights[0].len();
        if weights.iter().any(|w| w.len() != n) {
            return Err(Error::invalid("weight vectors differ in length"));
        }
        Ok(Self {
            rebalance_indices,
            weights,
        })
    }

    pub fn rebalance_indices(&self) -> &[usize] {
        &self.rebalance_indices
    }

    pub fn weights(&self) -> &[WeightVector] {
        &self.weights
    }

    pub fn assets(&self) -> usize {
        self.weights[0].len()
    }

    /// Spacing between rebalances, `None` for a single entry.
    pub fn eta(&self) -> Option<usize> {
        match self.rebalance_indices.as_slice() {
            [a, b, ..] => Some(b - a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnualMetrics {
    pub annual_return: f64,
    pub annual_sharpe: f64,
    /// Daily returns had zero spread; `annual_sharpe` is reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub draw: usize,
    pub annual_return: f64,
    pub annual_sharpe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    /// Dates of `value_series`, starting at the first rebalance.
    pub dates: Vec<NaiveDate>,
    pub value_series: Vec<f64>,
    pub annual_return: f64,
    pub annual_sharpe: f64,
    pub degenerate: bool,
    pub schedule: WeightSchedule,
    /// One point per draw, each draw's own schedule applied to real prices.
    pub draw_scatter: Option<Vec<ScatterPoint>>,
}

/// Who decides the weights.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    Gan(&'a ModelBundle),
    /// Max-Sharpe on the trailing `hist_len` real prices.
    Markowitz { hist_len: usize },
}

/// Offsets `h, h + eta, ...` strictly before the last day.
pub fn rebalance_indices(day_count: usize, hist_len: usize, eta: usize) -> Result<Vec<usize>> {
    if eta == 0 {
        return Err(Error::invalid("rebalance period eta must be at least 1"));
    }
    if hist_len + 1 >= day_count {
        return Err(Error::invalid(format!(
            "test period of {day_count} days leaves no holding days after the first {hist_len}"
        )));
    }
    Ok((hist_len..day_count - 1).step_by(eta).collect())
}

/// Per-draw max-Sharpe schedules from synthetic paths.
///
/// Draw `d` decides at offset `t` from its generated block covering `t`,
/// i.e. the block starting at `h + f * floor((t - h) / f)`.
pub fn strategy_from_paths(
    paths: &[Matrix],
    test_frame: &PriceFrame,
    hist_len: usize,
    future_len: usize,
    eta: usize,
    r_f: f64,
) -> Result<Vec<WeightSchedule>> {
    if future_len < 3 {
        return Err(Error::invalid("future_len must be at least 3 to estimate moments from a block"));
    }
    let dims = test_frame.prices().dim();
    let indices = rebalance_indices(dims.1, hist_len, eta)?;
    let a = test_frame.prices();
    for (d, p) in paths.iter().enumerate() {
        if p.dim() != dims || p.slice(s![.., ..hist_len]) != a.slice(s![.., ..hist_len]) {
            return Err(Error::invalid(format!("path {d} is not aligned with the test frame")));
        }
    }
    if (dims.1 - hist_len) % future_len != 0 {
        return Err(Error::invalid(format!(
            "generated span {} is not a multiple of future_len {future_len}",
            dims.1 - hist_len
        )));
    }
    paths
        .par_iter()
        .map(|p| {
            let weights = indices
                .iter()
                .map(|&t| {
                    let start = hist_len + (t - hist_len) / future_len * future_len;
                    let returns = simple_returns(p.slice(s![.., start..start + future_len]))?;
                    max_sharpe_weights(&estimate_moments(returns.view())?, r_f)
                })
                .collect::<Result<Vec<_>>>()?;
            WeightSchedule::new(indices.clone(), weights)
        })
        .collect()
}

/// Per-date average over draws.
pub fn mean_strategy(schedules: &[WeightSchedule]) -> Result<WeightSchedule> {
    let first = schedules.first().ok_or_else(|| Error::invalid("no schedules to average"))?;
    if schedules.iter().any(|s| s.rebalance_indices != first.rebalance_indices || s.assets() != first.assets()) {
        return Err(Error::invalid("schedules disagree on rebalance dates or asset count"));
    }
    let count = schedules.len() as f64;
    let weights = (0..first.rebalance_indices.len())
        .map(|j| {
            let mut sum = vec![0.0; first.assets()];
            for s in schedules {
                for (acc, w) in sum.iter_mut().zip(s.weights[j].as_slice()) {
                    *acc += w;
                }
            }
            let mean: Vec<f64> = sum.into_iter().map(|x| x / count).collect();
            WeightVector::new(mean)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightSchedule::new(first.rebalance_indices.clone(), weights)
}

/// Value of a unit investment from the first rebalance to the last day.
/// Share counts stay fixed between rebalances; each rebalance reallocates the
/// whole value at that day's close.
pub fn portfolio_value_series(schedule: &WeightSchedule, prices: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (n, k) = prices.dim();
    if schedule.assets() != n {
        return Err(Error::invalid(format!("schedule has {} assets, prices have {n}", schedule.assets())));
    }
    let last = *schedule.rebalance_indices.last().unwrap();
    if last >= k {
        return Err(Error::invalid(format!("rebalance offset {last} is outside the {k}-day frame")));
    }
    if prices.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::invalid("prices must be positive and finite"));
    }
    let t0 = schedule.rebalance_indices[0];
    let mut values = Vec::with_capacity(k - t0);
    let mut shares = vec![0.0; n];
    let mut next = 0;
    let mut value = 1.0;
    for t in t0..k {
        if t > t0 {
            value = (0..n).map(|i| shares[i] * prices[[i, t]]).sum();
        }
        if next < schedule.rebalance_indices.len() && schedule.rebalance_indices[next] == t {
            let w = schedule.weights[next].as_slice();
            for i in 0..n {
                shares[i] = value * w[i] / prices[[i, t]];
            }
            next += 1;
        }
        values.push(value);
    }
    Ok(values)
}

/// Annualized mean daily return and Sharpe ratio (population std, 252 days).
pub fn annualized_metrics(values: &[f64], r_f: f64) -> Result<AnnualMetrics> {
    if values.len() < 2 {
        return Err(Error::invalid("annualized metrics need at least 2 values"));
    }
    let returns: Vec<f64> = values.windows(2).map(|p| p[1] / p[0] - 1.0).collect();
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numeric("value series produced non-finite returns".into()));
    }
    let t = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / t;
    let std = (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / t).sqrt();
    let degenerate = std <= 1e-12;
    let annual_sharpe = if degenerate {
        0.0
    } else {
        (mean - r_f / TRADING_DAYS) / std * TRADING_DAYS.sqrt()
    };
    Ok(AnnualMetrics {
        annual_return: mean * TRADING_DAYS,
        annual_sharpe,
        degenerate,
    })
}

fn finish(schedule: WeightSchedule, test_frame: &PriceFrame, r_f: f64, scatter: Option<Vec<ScatterPoint>>) -> Result<BacktestResult> {
    let value_series = portfolio_value_series(&schedule, test_frame.prices().view())?;
    let m = annualized_metrics(&value_series, r_f)?;
    Ok(BacktestResult {
        dates: test_frame.dates()[schedule.rebalance_indices[0]..].to_vec(),
        value_series,
        annual_return: m.annual_return,
        annual_sharpe: m.annual_sharpe,
        degenerate: m.degenerate,
        schedule,
        draw_scatter: scatter,
    })
}

/// Markowitz schedule from the trailing `hist_len` prices before each rebalance.
pub fn markowitz_schedule(test_frame: &PriceFrame, hist_len: usize, eta: usize, r_f: f64) -> Result<WeightSchedule> {
    let a = test_frame.prices();
    let indices = rebalance_indices(test_frame.n_days(), hist_len, eta)?;
    let weights = indices
        .iter()
        .map(|&t| markowitz_weights(a.slice(s![.., t - hist_len..t]), r_f))
        .collect::<Result<Vec<_>>>()?;
    WeightSchedule::new(indices, weights)
}

/// Runs one strategy over the test period. GAN strategies simulate `n_draws`
/// paths, score every draw's schedule on real prices for the scatter, and
/// backtest the mean schedule.
pub fn run_experiment(
    strategy: Strategy<'_>,
    test_frame: &PriceFrame,
    eta: usize,
    n_draws: usize,
    seed: u64,
    r_f: f64,
) -> Result<BacktestResult> {
    match strategy {
        Strategy::Markowitz { hist_len } => finish(markowitz_schedule(test_frame, hist_len, eta, r_f)?, test_frame, r_f, None),
        Strategy::Gan(bundle) => {
            let cfg = bundle.config();
            let paths = simulate_paths(bundle, test_frame, n_draws, seed)?;
            let schedules = strategy_from_paths(&paths, test_frame, cfg.hist_len, cfg.future_len, eta, r_f)?;
            let real = test_frame.prices().view();
            let scatter = schedules
                .par_iter()
                .enumerate()
                .map(|(draw, s)| {
                    let m = annualized_metrics(&portfolio_value_series(s, real)?, r_f)?;
                    Ok(ScatterPoint {
                        draw,
                        annual_return: m.annual_return,
                        annual_sharpe: m.annual_sharpe,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            finish(mean_strategy(&schedules)?, test_frame, r_f, Some(scatter))
        }
    }
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::io("<csv writer>", e.into_error()))?;
    Ok(())
}

/// `date,<name>...`; all series must share `dates`.
pub fn write_value_series_csv<W: Write>(out: W, dates: &[NaiveDate], series: &[(&str, &[f64])]) -> Result<()> {
    if series.iter().any(|(_, v)| v.len() != dates.len()) {
        return Err(Error::invalid("value series lengths differ from the date column"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date"];
    header.extend(series.iter().map(|(name, _)| *name));
    w.write_record(&header)?;
    for (t, date) in dates.iter().enumerate() {
        let mut row = vec![date.format(DATE_FORMAT).to_string()];
        row.extend(series.iter().map(|(_, v)| v[t].to_string()));
        w.write_record(&row)?;
    }
    flush(w)
}

/// `draw,annual_return,annual_sharpe`.
pub fn write_scatter_csv<W: Write>(out: W, points: &[ScatterPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["draw", "annual_return", "annual_sharpe"])?;
    for p in points {
        w.write_record([p.draw.to_string(), p.annual_return.to_string(), p.annual_sharpe.to_string()])?;
    }
    flush(w)
}

/// Long format `date,ticker,weight`, one row per rebalance date and asset.
pub fn write_weights_csv<W: Write>(out: W, schedule: &WeightSchedule, frame: &PriceFrame) -> Result<()> {
    if schedule.assets() != frame.n_assets() {
        return Err(Error::invalid("schedule and frame differ in asset count"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "ticker", "weight"])?;
    for (&t, v) in schedule.rebalance_indices.iter().zip(&schedule.weights) {
        let date = frame
            .dates()
            .get(t)
            .ok_or_else(|| Error::invalid(format!("rebalance offset {t} is outside the frame")))?
            .format(DATE_FORMAT)
            .to_string();
        for (ticker, x) in frame.tickers().iter().zip(v.as_slice()) {
            w.write_record([date.as_str(), ticker.as_str(), &x.to_string()])?;
        }
    }
    flush(w)
}
