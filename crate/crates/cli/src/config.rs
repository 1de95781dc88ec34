//! Flat `key = value` run configuration. `#` starts a comment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use hybridgan::backtest::{RebalanceSetting, DEFAULT_N_DRAWS, DEFAULT_RISK_FREE_RATE};
use hybridgan::data::DATE_FORMAT;
use hybridgan::gan::TrainConfig;
use hybridgan::{Error, Result};

pub const CONFIG_FILE: &str = "run.conf";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Empty selects every column of the data file.
    pub tickers: Vec<String>,
    /// Last training day; later days form the test period.
    pub split_date: Option<NaiveDate>,
    /// Keep only the first `test_days` days of the test period.
    pub test_days: Option<usize>,
    pub train: TrainConfig,
    pub eta: usize,
    pub n_draws: usize,
    pub risk_free_rate: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            tickers: Vec::new(),
            split_date: None,
            test_days: None,
            train: TrainConfig::default(),
            eta: RebalanceSetting::Balanced.eta(),
            n_draws: DEFAULT_N_DRAWS,
            risk_free_rate: DEFAULT_RISK_FREE_RATE,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| invalid(format!("bad value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "tickers" => {
                self.tickers = value.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
            }
            "split_date" => {
                self.split_date = if value.is_empty() {
                    None
                } else {
                    Some(
                        NaiveDate::parse_from_str(value, DATE_FORMAT)
                            .map_err(|e| invalid(format!("bad value `{value}` for `split_date`: {e}")))?,
                    )
                }
            }
            "test_days" => self.test_days = if value == "all" { None } else { Some(parse(key, value)?) },
            "eta" => {
                self.eta = match value.parse::<RebalanceSetting>() {
                    Ok(s) => s.eta(),
                    Err(_) => parse(key, value)?,
                }
            }
            "n_draws" => self.n_draws = parse(key, value)?,
            "risk_free_rate" => self.risk_free_rate = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => {
                if !self.train.set(key, value)? {
                    return Err(invalid(format!("unknown configuration key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        line("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        line("tickers", self.tickers.join(","));
        line("split_date", self.split_date.map(|d| d.format(DATE_FORMAT).to_string()).unwrap_or_default());
        line("test_days", self.test_days.map(|d| d.to_string()).unwrap_or_else(|| "all".into()));
        line("eta", self.eta.to_string());
        line("n_draws", self.n_draws.to_string());
        line("risk_free_rate", self.risk_free_rate.to_string());
        line("output_dir", self.output_dir.display().to_string());
        out + &self.train.to_text()
    }

    /// Checks every field; run before any computation.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.eta == 0 {
            return Err(invalid("eta must be at least 1"));
        }
        if self.n_draws == 0 {
            return Err(invalid("n_draws must be at least 1"));
        }
        if !self.risk_free_rate.is_finite() {
            return Err(invalid("risk_free_rate must be finite"));
        }
        if self.test_days == Some(0) {
            return Err(invalid("test_days must be positive"));
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| invalid("no data file configured (set `data` or pass --data)"))
    }

    pub fn require_split(&self) -> Result<NaiveDate> {
        self.split_date
            .ok_or_else(|| invalid("no split date configured (set `split_date` or pass --split-date)"))
    }

    pub fn ticker_filter(&self) -> Option<&[String]> {
        (!self.tickers.is_empty()).then_some(self.tickers.as_slice())
    }
}
