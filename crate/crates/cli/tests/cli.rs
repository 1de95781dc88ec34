use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybridgan::gan::load_bundle;
use hybridgan_cli::report::PLOT_HEIGHT;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybridgan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 76 daily rows of three drifting sinusoids.
fn write_prices(dir: &Path) -> PathBuf {
    let mut text = String::from("date,AAA,BBB,CCC\n");
    let d0 = chrono::NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    for t in 0..76 {
        let x = t as f64;
        let date = d0 + chrono::Days::new(t);
        text.push_str(&format!(
            "{date},{:.4},{:.4},{:.4}\n",
            50.0 + 0.1 * x + 2.0 * (x / 4.0).sin(),
            80.0 - 0.05 * x + 3.0 * (x / 5.0 + 1.0).sin(),
            30.0 + 0.02 * x + (x / 3.0).cos()
        ));
    }
    let path = dir.join("prices.csv");
    fs::write(&path, text).unwrap();
    path
}

/// Tiny config: 40 training days, 36 test days (8 + 7 blocks of 4).
fn write_config(dir: &Path, data: &Path, out: &Path) -> PathBuf {
    let text = format!(
        "# tiny run\ndata = {}\nsplit_date = 2019-02-09\nhist_len = 8\nfuture_len = 4\nlatent_dim = 6\n\
         epochs = 5\nseed = 3\nn_draws = 6\neta = 4\noutput_dir = {}\n",
        data.display(),
        out.display()
    );
    let path = dir.join("tiny.conf");
    fs::write(&path, text).unwrap();
    path
}

struct Setup {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
    out: PathBuf,
}

fn setup() -> Setup {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let data = write_prices(&root);
    let out = root.join("run");
    let config = write_config(&root, &data, &out);
    Setup {
        _tmp: tmp,
        root,
        data,
        config,
        out,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_summarizes_and_validates() {
    let st = setup();
    let o = run(&["ingest", "--data", s(&st.data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("N=3 D=76 from 2019-01-01 to 2019-03-17"), "{}", stdout(&o));

    let out = st.root.join("subset.csv");
    let o = run(&["ingest", "--data", s(&st.data), "--tickers", "CCC,AAA", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(fs::read_to_string(&out).unwrap().starts_with("date,CCC,AAA\n"));

    let o = run(&["ingest", "--data", s(&st.data), "--tickers", "AAA,ZZZ"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ZZZ") && stderr(&o).contains("BBB"), "{}", stderr(&o));

    let bad = st.root.join("bad.csv");
    fs::write(&bad, "date,AAA,BBB\n2020-01-01,1,2\n2020-01-02,NaN,2\n").unwrap();
    let o = run(&["ingest", "--data", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 2") && stderr(&o).contains("AAA"), "{}", stderr(&o));
}

#[test]
fn train_is_deterministic_and_loadable() {
    let st = setup();
    let o = run(&["train", "--config", s(&st.config)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bundle = load_bundle(st.out.join("model.bin")).unwrap();
    assert_eq!(bundle.training_log().len(), 5);
    let log = fs::read_to_string(st.out.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);

    let again = st.root.join("again");
    let o = run(&["train", "--config", s(&st.config), "--out", s(&again)]);
    assert!(o.status.success());
    assert_eq!(fs::read(st.out.join("model.bin")).unwrap(), fs::read(again.join("model.bin")).unwrap());

    // the effective config reproduces the run
    let o = run(&["train", "--config", s(&again.join("run.conf"))]);
    assert!(o.status.success());
    assert_eq!(fs::read(st.out.join("model.bin")).unwrap(), fs::read(again.join("model.bin")).unwrap());
}

#[test]
fn bad_configuration_exits_with_validation_code() {
    let st = setup();
    let o = run(&["train", "--config", s(&st.config), "--set", "flavour=mint"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("flavour"));
    let o = run(&["train", "--config", s(&st.config), "--set", "eavesdrop=true"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("allow_forward_bias"), "{}", stderr(&o));
    let o = run(&["train", "--config", s(&st.config), "--set", "learning_rate=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_backtest_report_pipeline() {
    let st = setup();
    assert!(run(&["train", "--config", s(&st.config)]).status.success());

    let o = run(&["simulate", "--config", s(&st.config), "--n-draws", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let overlay = fs::read_to_string(st.out.join("overlay_AAA.csv")).unwrap();
    let prices = fs::read_to_string(&st.data).unwrap();
    assert!(overlay.starts_with("date,real,draw_0,draw_1,draw_2,draw_3,draw_4\n"));
    assert_eq!(overlay.lines().count(), 37);
    // first h rows copy the real prices
    for (row, real) in overlay.lines().skip(1).take(8).zip(prices.lines().skip(41)) {
        let cells: Vec<f64> = row.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        let want: f64 = real.split(',').nth(1).unwrap().parse().unwrap();
        assert!(cells.iter().all(|c| *c == want), "{row} vs {real}");
    }
    let paths = fs::read_to_string(st.out.join("paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 1 + 5 * 36 * 3);

    let o = run(&["backtest", "--config", s(&st.config), "--eta", "balanced"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["value_series.csv", "scatter.csv", "weights_cgan.csv", "weights_markowitz.csv", "summary.csv"] {
        assert!(st.out.join(f).is_file(), "{f}");
    }
    let values = fs::read_to_string(st.out.join("value_series.csv")).unwrap();
    assert!(values.starts_with("date,cgan,markowitz\n"));
    assert_eq!(fs::read_to_string(st.out.join("scatter.csv")).unwrap().lines().count(), 7);

    // same outputs with a single worker
    let first = fs::read(st.out.join("scatter.csv")).unwrap();
    assert!(run(&["--jobs", "1", "backtest", "--config", s(&st.config), "--eta", "15"]).status.success());
    assert_eq!(fs::read(st.out.join("scatter.csv")).unwrap(), first);

    let o = run(&["report", "--run", s(&st.out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scatter = fs::read_to_string(st.out.join("scatter.svg")).unwrap();
    assert_eq!(scatter.matches("class=\"draw\"").count(), 6);
    let weights = fs::read_to_string(st.out.join("weights_cgan.svg")).unwrap();
    let groups: Vec<&str> = weights.split("<g class=\"date\"").skip(1).collect();
    assert_eq!(groups.len(), 2);
    for g in groups {
        let total: f64 = g
            .split("</g>")
            .next()
            .unwrap()
            .split("height=\"")
            .skip(1)
            .map(|h| h.split('"').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - PLOT_HEIGHT).abs() < 1e-4, "{total}");
    }
    assert!(st.out.join("value_series.svg").is_file());
    assert!(st.out.join("weights_markowitz.svg").is_file());
}

#[test]
fn simulate_reports_divisibility_with_a_hint() {
    let st = setup();
    assert!(run(&["train", "--config", s(&st.config)]).status.success());
    let o = run(&["simulate", "--config", s(&st.config), "--set", "test_days=35"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncate the test frame to 32 days"), "{}", stderr(&o));
}

#[test]
fn markowitz_only_needs_no_bundle() {
    let st = setup();
    let o = run(&["backtest", "--config", s(&st.config), "--markowitz-only", "--eta", "defensive"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("markowitz"));
    assert!(!st.out.join("scatter.csv").exists());
    let values = fs::read_to_string(st.out.join("value_series.csv")).unwrap();
    assert!(values.starts_with("date,markowitz\n"));
    let o = run(&["report", "--run", s(&st.out)]);
    assert!(o.status.success());
}

#[test]
fn eavesdrop_bundle_is_refused_without_the_flag() {
    let st = setup();
    let o = run(&["train", "--config", s(&st.config), "--set", "eavesdrop=true", "--allow-forward-bias", "--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["backtest", "--config", s(&st.config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("allow_forward_bias"), "{}", stderr(&o));
    let o = run(&["backtest", "--config", s(&st.config), "--allow-forward-bias"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn report_on_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["report", "--run", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("value_series.csv"));
}

#[test]
fn missing_data_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data"));
}
