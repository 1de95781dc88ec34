//! SVG charts rendered from the CSV files of a backtest run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hybridgan::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Drawing height of the plot area; stacked weights fill it exactly.
pub const PLOT_HEIGHT: f64 = HEIGHT - 2.0 * MARGIN;
const PLOT_WIDTH: f64 = WIDTH - 2.0 * MARGIN;

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"25\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_range: (f64, f64)) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (v, y) in [(y_range.0, y0), (y_range.1, y1)] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>",
            x0 - 4.0,
            y + 4.0,
            v
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn scale(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

fn legend(out: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * k as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            WIDTH - MARGIN + 5.0,
            y,
            PALETTE[k % PALETTE.len()],
            WIDTH - MARGIN + 18.0,
            y + 9.0,
            escape(name)
        );
    }
}

/// One polyline per named value series.
pub fn render_value_series(dates: &[String], series: &[(String, Vec<f64>)]) -> String {
    let mut out = header("Portfolio value");
    let yr = range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    axes(&mut out, &format!("{} to {}", dates.first().map_or("", |s| s), dates.last().map_or("", |s| s)), "value", yr);
    let xr = (0.0, (dates.len().max(2) - 1) as f64);
    for (k, (_, values)) in series.iter().enumerate() {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(t, v)| {
                format!(
                    "{:.2},{:.2}",
                    scale(t as f64, xr, MARGIN, WIDTH - MARGIN),
                    scale(*v, yr, HEIGHT - MARGIN, MARGIN)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline class=\"series\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            PALETTE[k % PALETTE.len()],
            pts.join(" ")
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out + "</svg>\n"
}

/// One circle per draw plus a cross per named strategy.
pub fn render_scatter(draws: &[(f64, f64)], strategies: &[(String, f64, f64)]) -> String {
    let mut out = header("Annual return vs Sharpe ratio");
    let xr = range(draws.iter().map(|p| p.0).chain(strategies.iter().map(|s| s.1)));
    let yr = range(draws.iter().map(|p| p.1).chain(strategies.iter().map(|s| s.2)));
    axes(&mut out, &format!("annual return [{:.3}, {:.3}]", xr.0, xr.1), "annual Sharpe ratio", yr);
    for (r, s) in draws {
        let _ = writeln!(
            out,
            "<circle class=\"draw\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.4\"/>",
            scale(*r, xr, MARGIN, WIDTH - MARGIN),
            scale(*s, yr, HEIGHT - MARGIN, MARGIN),
            PALETTE[0]
        );
    }
    for (k, (_, r, s)) in strategies.iter().enumerate() {
        let (x, y) = (scale(*r, xr, MARGIN, WIDTH - MARGIN), scale(*s, yr, HEIGHT - MARGIN, MARGIN));
        let _ = writeln!(
            out,
            "<path class=\"strategy\" d=\"M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}\" stroke=\"{}\" stroke-width=\"2.5\"/>",
            x - 6.0,
            y - 6.0,
            x + 6.0,
            y + 6.0,
            x - 6.0,
            y + 6.0,
            x + 6.0,
            y - 6.0,
            PALETTE[(k + 1) % PALETTE.len()]
        );
    }
    let mut names = vec!["draws"];
    names.extend(strategies.iter().map(|s| s.0.as_str()));
    legend(&mut out, &names);
    out + "</svg>\n"
}

/// Stacked bars, one group per rebalance date; each group spans [`PLOT_HEIGHT`].
pub fn render_weights(dates: &[String], tickers: &[String], weights: &[Vec<f64>]) -> String {
    let mut out = header("Portfolio weights");
    axes(&mut out, "rebalance date", "weight", (0.0, 1.0));
    let bar = PLOT_WIDTH / dates.len().max(1) as f64;
    for (j, (date, w)) in dates.iter().zip(weights).enumerate() {
        let _ = writeln!(out, "<g class=\"date\" data-date=\"{}\">", escape(date));
        let mut top = HEIGHT - MARGIN;
        for (i, x) in w.iter().enumerate() {
            let h = x * PLOT_HEIGHT;
            top -= h;
            let _ = writeln!(
                out,
                "<rect x=\"{:.3}\" y=\"{top:.6}\" width=\"{:.3}\" height=\"{h:.6}\" fill=\"{}\"/>",
                MARGIN + j as f64 * bar,
                bar,
                PALETTE[i % PALETTE.len()]
            );
        }
        out.push_str("</g>\n");
    }
    let names: Vec<&str> = tickers.iter().map(String::as_str).collect();
    legend(&mut out, &names);
    out + "</svg>\n"
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn number(path: &Path, cell: &str) -> Result<f64> {
    cell.parse()
        .map_err(|_| invalid(format!("{}: `{cell}` is not a number", path.display())))
}

fn write(path: PathBuf, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, svg).map_err(|source| Error::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

/// Renders every chart the run directory has data for.
pub fn write_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let values_path = run_dir.join("value_series.csv");
    if !values_path.is_file() {
        return Err(invalid(format!(
            "{} has no value_series.csv; run `backtest` into it first",
            run_dir.display()
        )));
    }
    let mut written = Vec::new();

    let (head, rows) = read_table(&values_path)?;
    let dates: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
    let series = (1..head.len())
        .map(|c| Ok((head[c].clone(), rows.iter().map(|r| number(&values_path, &r[c])).collect::<Result<_>>()?)))
        .collect::<Result<Vec<_>>>()?;
    write(run_dir.join("value_series.svg"), render_value_series(&dates, &series), &mut written)?;

    let scatter_path = run_dir.join("scatter.csv");
    if scatter_path.is_file() {
        let (_, rows) = read_table(&scatter_path)?;
        let draws = rows
            .iter()
            .map(|r| Ok((number(&scatter_path, &r[1])?, number(&scatter_path, &r[2])?)))
            .collect::<Result<Vec<_>>>()?;
        let summary_path = run_dir.join("summary.csv");
        let strategies = if summary_path.is_file() {
            let (_, rows) = read_table(&summary_path)?;
            rows.iter()
                .map(|r| Ok((r[0].clone(), number(&summary_path, &r[1])?, number(&summary_path, &r[2])?)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        write(run_dir.join("scatter.svg"), render_scatter(&draws, &strategies), &mut written)?;
    }

    let mut weight_files: Vec<PathBuf> = fs::read_dir(run_dir)
        .map_err(|source| Error::Io { path: run_dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("weights_") && n.ends_with(".csv"))
        })
        .collect();
    weight_files.sort();
    for path in weight_files {
        let (_, rows) = read_table(&path)?;
        let mut dates: Vec<String> = Vec::new();
        let mut tickers: Vec<String> = Vec::new();
        let mut weights: Vec<Vec<f64>> = Vec::new();
        for r in &rows {
            if dates.last() != Some(&r[0]) {
                dates.push(r[0].clone());
                weights.push(Vec::new());
            }
            if dates.len() == 1 {
                tickers.push(r[1].clone());
            }
            weights.last_mut().unwrap().push(number(&path, &r[2])?);
        }
        write(path.with_extension("svg"), render_weights(&dates, &tickers, &weights), &mut written)?;
    }
    Ok(written)
}
