//! Price ingestion, train/test splitting and windowing.
//!
//! Index convention: the public API uses 0-based column offsets. The 1-based
//! index `i` of the training/inference loops corresponds to offset `i - 1`, so
//! the first training window starts at offset 0 and the first inference block
//! for history length `h` starts at offset `h`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Adjusted closing prices for `N` assets over `D` trading days (assets are rows).
#[derive(Debug, Clone, PartialEq)]
pub struct PriceFrame {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    prices: Array2<f64>,
}

impl PriceFrame {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, prices: Array2<f64>) -> Result<Self> {
        if tickers.len() < 2 {
            return Err(Error::invalid(format!(
                "a price frame needs at least 2 assets, got {}",
                tickers.len()
            )));
        }
        if prices.dim() != (tickers.len(), dates.len()) {
            return Err(Error::invalid(format!(
                "price matrix is {:?} but frame has {} tickers and {} dates",
                prices.dim(),
                tickers.len(),
                dates.len()
            )));
        }
        if dates.is_empty() {
            return Err(Error::invalid("a price frame needs at least one date"));
        }
        for (k, pair) in dates.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::invalid(format!(
                    "dates not strictly increasing at position {}: {} then {}",
                    k + 1,
                    pair[0],
                    pair[1]
                )));
            }
        }
        for ((i, t), &p) in prices.indexed_iter() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::BadCell {
                    row: t + 1,
                    column: tickers[i].clone(),
                    reason: format!("price must be finite and positive, got {p}"),
                });
            }
        }
        Ok(Self {
            tickers,
            dates,
            prices,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &Array2<f64> {
        &self.prices
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    /// Columns `[start, end)` as a new frame.
    pub fn slice_days(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_days() {
            return Err(Error::invalid(format!(
                "day range {start}..{end} outside frame of {} days",
                self.n_days()
            )));
        }
        Ok(Self {
            tickers: self.tickers.clone(),
            dates: self.dates[start..end].to_vec(),
            prices: self.prices.slice(s![.., start..end]).to_owned(),
        })
    }

    /// Keeps the first `n` days. Used to satisfy the inference divisibility rule.
    pub fn truncate_days(&self, n: usize) -> Result<Self> {
        self.slice_days(0, n)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut row = vec![date.format(DATE_FORMAT).to_string()];
            row.extend(self.prices.column(t).iter().map(|&p| format_sig(p, 10)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// One `N x (h+f)` window with its historical and future blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    full: Array2<f64>,
    hist_len: usize,
    start: usize,
}

impl WindowSample {
    pub fn from_full(full: Array2<f64>, hist_len: usize, start: usize) -> Result<Self> {
        if hist_len == 0 || hist_len >= full.ncols() {
            return Err(Error::invalid(format!(
                "history length {hist_len} must lie strictly inside a window of {} columns",
                full.ncols()
            )));
        }
        Ok(Self {
            full,
            hist_len,
            start,
        })
    }

    pub fn full(&self) -> ArrayView2<'_, f64> {
        self.full.view()
    }

    pub fn historical(&self) -> ArrayView2<'_, f64> {
        self.full.slice(s![.., ..self.hist_len])
    }

    pub fn future(&self) -> ArrayView2<'_, f64> {
        self.full.slice(s![.., self.hist_len..])
    }

    pub fn hist_len(&self) -> usize {
        self.hist_len
    }

    pub fn future_len(&self) -> usize {
        self.full.ncols() - self.hist_len
    }

    /// 0-based column offset of the window in its source frame.
    pub fn start(&self) -> usize {
        self.start
    }
}

/// Reads a `date,<ticker>...` CSV of adjusted closes.
///
/// With `expected_tickers`, the frame keeps only those columns, in that order.
pub fn load_price_csv(path: impl AsRef<Path>, expected_tickers: Option<&[String]>) -> Result<PriceFrame> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_price_csv(file, expected_tickers)
}

pub fn read_price_csv<R: Read>(input: R, expected_tickers: Option<&[String]>) -> Result<PriceFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("date") {
        return Err(Error::invalid(format!(
            "first header column must be `date`, got {:?}",
            header.first()
        )));
    }
    let available: Vec<String> = header[1..].to_vec();
    let columns: Vec<usize> = match expected_tickers {
        Some(wanted) => {
            let missing: Vec<String> = wanted
                .iter()
                .filter(|t| !available.contains(t))
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(Error::UnknownTicker { missing, available });
            }
            wanted
                .iter()
                .map(|t| available.iter().position(|a| a == t).unwrap() + 1)
                .collect()
        }
        None => (1..header.len()).collect(),
    };
    let tickers: Vec<String> = columns.iter().map(|&c| header[c].clone()).collect();

    let mut dates = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let raw_date = record.get(0).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT).map_err(|e| Error::BadCell {
            row,
            column: "date".into(),
            reason: format!("cannot parse `{raw_date}` as an ISO-8601 date: {e}"),
        })?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(Error::BadCell {
                    row,
                    column: "date".into(),
                    reason: format!("dates must be strictly increasing ({prev} then {date})"),
                });
            }
        }
        if record.len() != header.len() {
            return Err(Error::BadCell {
                row,
                column: "<row>".into(),
                reason: format!("expected {} fields, got {}", header.len(), record.len()),
            });
        }
        for &c in &columns {
            let cell = record.get(c).unwrap_or("");
            let bad = |reason: String| Error::BadCell {
                row,
                column: header[c].clone(),
                reason,
            };
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("null") {
                return Err(bad("missing value".into()));
            }
            let p: f64 = cell
                .parse()
                .map_err(|_| bad(format!("cannot parse `{cell}` as a decimal")))?;
            if !(p.is_finite() && p > 0.0) {
                return Err(bad(format!("price must be finite and positive, got {cell}")));
            }
            values.push(p);
        }
        dates.push(date);
    }
    let n = tickers.len();
    let d = dates.len();
    // values were pushed row by row (day-major); the frame stores assets as rows
    let prices = Array2::from_shape_vec((d, n), values)
        .map_err(|e| Error::invalid(e.to_string()))?
        .reversed_axes()
        .as_standard_layout()
        .into_owned();
    PriceFrame::new(tickers, dates, prices)
}

/// Splits into days `<= split_date` and days `> split_date`; both parts must be non-empty.
pub fn split_train_test(frame: &PriceFrame, split_date: NaiveDate) -> Result<(PriceFrame, PriceFrame)> {
    let dates = frame.dates();
    let cut = dates.partition_point(|d| *d <= split_date);
    if cut == 0 {
        return Err(Error::invalid(format!(
            "split date {split_date} precedes the first date {}",
            dates[0]
        )));
    }
    if cut == dates.len() {
        return Err(Error::invalid(format!(
            "split date {split_date} leaves an empty test set (last date {})",
            dates[dates.len() - 1]
        )));
    }
    Ok((frame.slice_days(0, cut)?, frame.slice_days(cut, dates.len())?))
}

/// 0-based start offsets of every training window: `0..=day_count - window`.
pub fn training_index_set(day_count: usize, window: usize) -> Result<Vec<usize>> {
    if window == 0 || day_count < window {
        return Err(Error::invalid(format!(
            "need at least {window} days for one training window, got {day_count}"
        )));
    }
    Ok((0..=day_count - window).collect())
}

/// 0-based start offsets of the generated blocks: `h, h+f, h+2f, ...`.
pub fn inference_index_set(day_count: usize, hist_len: usize, future_len: usize) -> Result<Vec<usize>> {
    if hist_len == 0 || future_len == 0 {
        return Err(Error::invalid("history and future lengths must be positive"));
    }
    if day_count < hist_len + future_len {
        return Err(Error::invalid(format!(
            "need at least {} test days, got {day_count}",
            hist_len + future_len
        )));
    }
    let span = day_count - hist_len;
    if span % future_len != 0 {
        let keep = hist_len + (span / future_len) * future_len;
        return Err(Error::invalid(format!(
            "test length minus history ({span}) is not divisible by the future length {future_len}; \
             truncate the test frame to {keep} days"
        )));
    }
    Ok((0..span / future_len).map(|k| hist_len + k * future_len).collect())
}

pub fn extract_window(frame: &PriceFrame, start: usize, hist_len: usize, future_len: usize) -> Result<WindowSample> {
    extract_window_from(frame.prices().view(), start, hist_len, future_len)
}

pub fn extract_window_from(
    prices: ArrayView2<'_, f64>,
    start: usize,
    hist_len: usize,
    future_len: usize,
) -> Result<WindowSample> {
    let w = hist_len + future_len;
    if start + w > prices.ncols() {
        return Err(Error::invalid(format!(
            "window starting at offset {start} needs {w} columns but only {} exist",
            prices.ncols()
        )));
    }
    WindowSample::from_full(prices.slice(s![.., start..start + w]).to_owned(), hist_len, start)
}

/// Daily simple returns `p[t+1]/p[t] - 1` per row.
pub fn simple_returns(prices: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, t) = prices.dim();
    if t < 2 {
        return Err(Error::invalid(format!("need at least 2 prices per asset, got {t}")));
    }
    if let Some(((i, j), p)) = prices.indexed_iter().find(|(_, &p)| !(p > 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!(
            "non-positive price {p} at asset {i}, day {j}"
        )));
    }
    Ok(Array2::from_shape_fn((n, t - 1), |(i, j)| {
        prices[[i, j + 1]] / prices[[i, j]] - 1.0
    }))
}
