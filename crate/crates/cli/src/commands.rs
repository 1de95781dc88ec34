use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use hybridgan::backtest::{
    run_experiment, write_scatter_csv, write_value_series_csv, write_weights_csv, BacktestResult, Strategy,
};
use hybridgan::data::{load_price_csv, split_train_test, PriceFrame, DATE_FORMAT};
use hybridgan::gan::{load_bundle, save_bundle, simulate_paths, train, write_training_log, ModelBundle};
use hybridgan::{Error, Result};
use log::info;

use crate::config::{RunConfig, CONFIG_FILE};
use crate::report::write_report;

pub const BUNDLE_FILE: &str = "model.bin";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let path = cfg.output_dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_text()).map_err(io_err(&path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub tickers: Vec<String>,
    pub days: usize,
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "N={} D={} from {} to {} tickers={}",
            self.tickers.len(),
            self.days,
            self.first.format(DATE_FORMAT),
            self.last.format(DATE_FORMAT),
            self.tickers.join(",")
        )
    }
}

/// Validates a price file and optionally writes the selected columns back out.
pub fn cmd_ingest(data: &Path, tickers: Option<&[String]>, out: Option<&Path>) -> Result<IngestSummary> {
    let frame = load_price_csv(data, tickers)?;
    if let Some(out) = out {
        frame.save_csv(out)?;
    }
    let dates = frame.dates();
    Ok(IngestSummary {
        tickers: frame.tickers().to_vec(),
        days: frame.n_days(),
        first: dates[0],
        last: dates[dates.len() - 1],
    })
}

/// Training frame (days up to the split, or all days) and the optional test frame.
pub fn load_frames(cfg: &RunConfig) -> Result<(PriceFrame, Option<PriceFrame>)> {
    let frame = load_price_csv(cfg.data_path()?, cfg.ticker_filter())?;
    let Some(split) = cfg.split_date else {
        return Ok((frame, None));
    };
    let (train, mut test) = split_train_test(&frame, split)?;
    if let Some(n) = cfg.test_days {
        if n > test.n_days() {
            return Err(Error::Invalid(format!(
                "test_days = {n} exceeds the {} test days available",
                test.n_days()
            )));
        }
        test = test.truncate_days(n)?;
    }
    Ok((train, Some(test)))
}

fn test_frame(cfg: &RunConfig) -> Result<PriceFrame> {
    cfg.require_split()?;
    Ok(load_frames(cfg)?.1.expect("split date is set"))
}

/// Trains a bundle on the training period; writes the bundle, the training
/// log and the effective config into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let (train_frame, _) = load_frames(cfg)?;
    prepare_output(cfg)?;
    info!(
        "training {} on {} assets x {} days for {} epochs",
        cfg.train.model_kind,
        train_frame.n_assets(),
        train_frame.n_days(),
        cfg.train.epochs
    );
    let bundle = train(&train_frame, &cfg.train)?;
    save_bundle(cfg.output_dir.join(BUNDLE_FILE), &bundle)?;
    let log_path = cfg.output_dir.join("training_log.csv");
    let mut w = create(&log_path)?;
    write_training_log(&mut w, bundle.training_log())?;
    finish(w, &log_path)?;
    Ok(bundle)
}

fn load_checked_bundle(cfg: &RunConfig, path: &Path) -> Result<ModelBundle> {
    let bundle = load_bundle(path)?;
    if bundle.config().eavesdrop && !cfg.train.allow_forward_bias {
        return Err(Error::ForwardBias);
    }
    Ok(bundle)
}

/// Simulates `n_draws` test-period paths. Writes `paths.csv`
/// (`draw,date,ticker,price`) and one `overlay_<ticker>.csv` per asset with
/// the real series next to the first `overlay` draws.
pub fn cmd_simulate(cfg: &RunConfig, bundle_path: &Path, overlay: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let bundle = load_checked_bundle(cfg, bundle_path)?;
    let test = test_frame(cfg)?;
    prepare_output(cfg)?;
    info!("simulating {} draws over {} test days", cfg.n_draws, test.n_days());
    let paths = simulate_paths(&bundle, &test, cfg.n_draws, cfg.train.seed)?;
    let dates: Vec<String> = test.dates().iter().map(|d| d.format(DATE_FORMAT).to_string()).collect();
    let mut written = Vec::new();

    let all = cfg.output_dir.join("paths.csv");
    let mut w = csv::Writer::from_writer(create(&all)?);
    w.write_record(["draw", "date", "ticker", "price"])?;
    for (d, p) in paths.iter().enumerate() {
        for (t, date) in dates.iter().enumerate() {
            for (i, ticker) in test.tickers().iter().enumerate() {
                w.write_record([d.to_string().as_str(), date, ticker, &p[[i, t]].to_string()])?;
            }
        }
    }
    finish(w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?, &all)?;
    written.push(all);

    let shown = overlay.min(paths.len());
    for (i, ticker) in test.tickers().iter().enumerate() {
        let path = cfg.output_dir.join(format!("overlay_{ticker}.csv"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        let mut head = vec!["date".to_string(), "real".to_string()];
        head.extend((0..shown).map(|d| format!("draw_{d}")));
        w.write_record(&head)?;
        for (t, date) in dates.iter().enumerate() {
            let mut row = vec![date.clone(), test.prices()[[i, t]].to_string()];
            row.extend(paths[..shown].iter().map(|p| p[[i, t]].to_string()));
            w.write_record(&row)?;
        }
        finish(w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct NamedResult {
    pub name: String,
    pub result: BacktestResult,
}

/// Backtests the bundle (if any) and the Markowitz baseline on the test
/// period. Writes `value_series.csv`, `summary.csv`, `weights_<name>.csv`
/// and, for a bundle, `scatter.csv`.
pub fn cmd_backtest(cfg: &RunConfig, bundle_path: Option<&Path>) -> Result<Vec<NamedResult>> {
    cfg.validate()?;
    let bundle = bundle_path.map(|p| load_checked_bundle(cfg, p)).transpose()?;
    let test = test_frame(cfg)?;
    prepare_output(cfg)?;
    let mut results = Vec::new();
    if let Some(b) = &bundle {
        info!("backtesting {} with {} draws, eta = {}", b.model_kind(), cfg.n_draws, cfg.eta);
        let r = run_experiment(Strategy::Gan(b), &test, cfg.eta, cfg.n_draws, cfg.train.seed, cfg.risk_free_rate)?;
        results.push(NamedResult {
            name: b.model_kind().to_string(),
            result: r,
        });
    }
    let hist_len = bundle.as_ref().map_or(cfg.train.hist_len, |b| b.config().hist_len);
    let r = run_experiment(Strategy::Markowitz { hist_len }, &test, cfg.eta, 1, cfg.train.seed, cfg.risk_free_rate)?;
    results.push(NamedResult {
        name: "markowitz".into(),
        result: r,
    });

    let dir = &cfg.output_dir;
    let path = dir.join("value_series.csv");
    let mut w = create(&path)?;
    let series: Vec<(&str, &[f64])> = results.iter().map(|r| (r.name.as_str(), r.result.value_series.as_slice())).collect();
    write_value_series_csv(&mut w, &results[0].result.dates, &series)?;
    finish(w, &path)?;

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["strategy", "annual_return", "annual_sharpe", "degenerate"])?;
    for r in &results {
        w.write_record([
            r.name.clone(),
            r.result.annual_return.to_string(),
            r.result.annual_sharpe.to_string(),
            r.result.degenerate.to_string(),
        ])?;
    }
    finish(w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?, &path)?;

    for r in &results {
        let path = dir.join(format!("weights_{}.csv", r.name));
        let mut w = create(&path)?;
        write_weights_csv(&mut w, &r.result.schedule, &test)?;
        finish(w, &path)?;
        if let Some(points) = &r.result.draw_scatter {
            let path = dir.join("scatter.csv");
            let mut w = create(&path)?;
            write_scatter_csv(&mut w, points)?;
            finish(w, &path)?;
        }
    }
    Ok(results)
}

pub fn cmd_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    write_report(run_dir)
}
