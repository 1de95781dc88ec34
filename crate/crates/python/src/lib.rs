//! Python bindings: price frames, model training and simulation, the
//! max-Sharpe solver and strategy backtests.

use std::str::FromStr;

use chrono::NaiveDate;
use hybridgan::backtest::{self, Strategy};
use hybridgan::data::{self, DATE_FORMAT};
use hybridgan::gan::{self, ModelBundle, TrainConfig};
use hybridgan::portfolio::{self, MomentEstimate};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: hybridgan::Error) -> PyErr {
    match e {
        hybridgan::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|e| PyValueError::new_err(format!("bad date `{s}`: {e}")))
}

/// Prices for several assets over trading days; assets are rows.
#[pyclass(name = "PriceFrame", module = "hybridgan_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPriceFrame {
    inner: data::PriceFrame,
}

#[pymethods]
impl PyPriceFrame {
    #[new]
    fn new(tickers: Vec<String>, dates: Vec<String>, prices: Vec<Vec<f64>>) -> PyResult<Self> {
        let dates = dates.iter().map(|d| parse_date(d)).collect::<PyResult<Vec<_>>>()?;
        let inner = data::PriceFrame::new(tickers, dates, matrix(prices)?).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a wide CSV (a date column, then one column per ticker).
    #[staticmethod]
    #[pyo3(signature = (path, tickers=None))]
    fn load_csv(path: &str, tickers: Option<Vec<String>>) -> PyResult<Self> {
        let inner = data::load_price_csv(path, tickers.as_deref()).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        self.inner.save_csv(path).map_err(to_py)
    }

    #[getter]
    fn tickers(&self) -> Vec<String> {
        self.inner.tickers().to_vec()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.inner.dates().iter().map(|d| d.format(DATE_FORMAT).to_string()).collect()
    }

    #[getter]
    fn prices(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.prices())
    }

    /// Splits into days up to and including `date` and the days after it.
    fn split(&self, date: &str) -> PyResult<(Self, Self)> {
        let (train, test) = data::split_train_test(&self.inner, parse_date(date)?).map_err(to_py)?;
        Ok((Self { inner: train }, Self { inner: test }))
    }

    fn __len__(&self) -> usize {
        self.inner.n_days()
    }

    fn __repr__(&self) -> String {
        format!(
            "PriceFrame({} assets x {} days)",
            self.inner.n_assets(),
            self.inner.n_days()
        )
    }
}

/// Training hyperparameters. Keys match the CLI config file.
#[pyclass(name = "TrainConfig", module = "hybridgan_py", skip_from_py_object)]
#[derive(Clone, Default)]
pub struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Builds a config from defaults overridden by keyword arguments,
    /// e.g. `TrainConfig(model_kind="hybrid_cgan", epochs=200)`.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<std::collections::HashMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut cfg = Self::default();
        for (key, value) in overrides.unwrap_or_default() {
            let text = match value.extract::<bool>() {
                Ok(b) if value.is_instance_of::<pyo3::types::PyBool>() => b.to_string(),
                _ => value.str()?.to_string(),
            };
            cfg.set(&key, &text)?;
        }
        Ok(cfg)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainConfig::from_text(text).map_err(to_py)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        if self.inner.set(key, value).map_err(to_py)? {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("unknown config key `{key}`")))
        }
    }

    fn to_dict(&self) -> Vec<(&'static str, String)> {
        self.inner.to_pairs()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        let pairs: Vec<String> = self.inner.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("TrainConfig({})", pairs.join(", "))
    }
}

/// A trained model: networks, optional mean proposer and the training log.
#[pyclass(name = "Model", module = "hybridgan_py", frozen, skip_from_py_object)]
pub struct PyModel {
    inner: ModelBundle,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: gan::load_bundle(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        gan::save_bundle(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn model_kind(&self) -> &'static str {
        self.inner.model_kind().as_str()
    }

    #[getter]
    fn config(&self) -> PyTrainConfig {
        PyTrainConfig {
            inner: self.inner.config().clone(),
        }
    }

    /// Per-epoch `(critic, generator, ap, proposer_mse)` losses.
    #[getter]
    fn training_log(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.inner
            .training_log()
            .iter()
            .map(|l| (l.epoch, l.critic_loss, l.generator_loss, l.ap_loss, l.proposer_mse))
            .collect()
    }

    /// Synthetic test-period price paths, one `assets x days` matrix per draw.
    #[pyo3(signature = (test, n_draws, seed=0))]
    fn simulate(&self, py: Python<'_>, test: &PyPriceFrame, n_draws: usize, seed: u64) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let paths = py
            .detach(|| gan::simulate_paths(&self.inner, &test.inner, n_draws, seed))
            .map_err(to_py)?;
        Ok(paths.iter().map(rows_of).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model({}, {} assets)", self.inner.model_kind(), self.inner.assets())
    }
}

/// Trains a model on `frame` with `config`.
#[pyfunction]
fn train(py: Python<'_>, frame: &PyPriceFrame, config: &PyTrainConfig) -> PyResult<PyModel> {
    let inner = py.detach(|| gan::train(&frame.inner, &config.inner)).map_err(to_py)?;
    Ok(PyModel { inner })
}

/// Outcome of one backtest run.
#[pyclass(name = "BacktestResult", module = "hybridgan_py", frozen, get_all)]
pub struct PyBacktestResult {
    dates: Vec<String>,
    value_series: Vec<f64>,
    annual_return: f64,
    annual_sharpe: f64,
    degenerate: bool,
    rebalance_indices: Vec<usize>,
    weights: Vec<Vec<f64>>,
    /// `(draw, annual_return, annual_sharpe)` per simulated draw; GAN runs only.
    scatter: Option<Vec<(usize, f64, f64)>>,
}

#[pymethods]
impl PyBacktestResult {
    fn __repr__(&self) -> String {
        format!(
            "BacktestResult(annual_return={:.4}, annual_sharpe={:.4})",
            self.annual_return, self.annual_sharpe
        )
    }
}

/// Backtests a GAN model's mean strategy, or the Markowitz baseline when
/// `model` is None, over `test` with rebalance period `eta`.
#[pyfunction]
#[pyo3(signature = (test, model=None, eta=15, n_draws=backtest::DEFAULT_N_DRAWS, seed=0, risk_free_rate=backtest::DEFAULT_RISK_FREE_RATE, hist_len=None))]
#[allow(clippy::too_many_arguments)]
fn run_backtest(
    py: Python<'_>,
    test: &PyPriceFrame,
    model: Option<&PyModel>,
    eta: usize,
    n_draws: usize,
    seed: u64,
    risk_free_rate: f64,
    hist_len: Option<usize>,
) -> PyResult<PyBacktestResult> {
    let strategy = match model {
        Some(m) => Strategy::Gan(&m.inner),
        None => Strategy::Markowitz {
            hist_len: hist_len.unwrap_or(TrainConfig::default().hist_len),
        },
    };
    let r = py
        .detach(|| backtest::run_experiment(strategy, &test.inner, eta, n_draws, seed, risk_free_rate))
        .map_err(to_py)?;
    Ok(PyBacktestResult {
        dates: r.dates.iter().map(|d| d.format(DATE_FORMAT).to_string()).collect(),
        value_series: r.value_series,
        annual_return: r.annual_return,
        annual_sharpe: r.annual_sharpe,
        degenerate: r.degenerate,
        rebalance_indices: r.schedule.rebalance_indices().to_vec(),
        weights: r.schedule.weights().iter().map(|w| w.as_slice().to_vec()).collect(),
        scatter: r
            .draw_scatter
            .map(|s| s.iter().map(|p| (p.draw, p.annual_return, p.annual_sharpe)).collect()),
    })
}

/// Long-only maximum-Sharpe weights for the given mean returns and covariance.
#[pyfunction]
#[pyo3(signature = (mean_returns, covariance, risk_free_rate=0.0))]
fn max_sharpe_weights(mean_returns: Vec<f64>, covariance: Vec<Vec<f64>>, risk_free_rate: f64) -> PyResult<Vec<f64>> {
    let m = MomentEstimate::new(Array1::from(mean_returns), matrix(covariance)?, 0).map_err(to_py)?;
    Ok(portfolio::max_sharpe_weights(&m, risk_free_rate).map_err(to_py)?.into_vec())
}

/// Max-Sharpe weights estimated from an `assets x days` price history.
#[pyfunction]
#[pyo3(signature = (prices, risk_free_rate=0.0))]
fn markowitz_weights(prices: Vec<Vec<f64>>, risk_free_rate: f64) -> PyResult<Vec<f64>> {
    let p = matrix(prices)?;
    Ok(portfolio::markowitz_weights(p.view(), risk_free_rate)
        .map_err(to_py)?
        .into_vec())
}

/// Euclidean projection onto the probability simplex.
#[pyfunction]
fn project_to_simplex(y: Vec<f64>) -> Vec<f64> {
    portfolio::project_to_simplex(&y)
}

/// Rebalance period for a named setting (`defensive`, `balanced`, `aggressive`).
#[pyfunction]
fn rebalance_eta(setting: &str) -> PyResult<usize> {
    Ok(backtest::RebalanceSetting::from_str(setting).map_err(to_py)?.eta())
}

#[pymodule]
fn hybridgan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPriceFrame>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBacktestResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_backtest, m)?)?;
    m.add_function(wrap_pyfunction!(max_sharpe_weights, m)?)?;
    m.add_function(wrap_pyfunction!(markowitz_weights, m)?)?;
    m.add_function(wrap_pyfunction!(project_to_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(rebalance_eta, m)?)?;
    m.add("TRADING_DAYS", backtest::TRADING_DAYS)?;
    Ok(())
}
