use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybridgan::{Error, Result};
use hybridgan_cli::commands::{cmd_backtest, cmd_ingest, cmd_report, cmd_simulate, cmd_train, BUNDLE_FILE};
use hybridgan_cli::config::RunConfig;
use hybridgan_cli::exit_code;

#[derive(Parser)]
#[command(name = "hybridgan", version, about = "GAN scenario generation and max-Sharpe backtests")]
struct Cli {
    /// Worker threads for simulation and backtest draws (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a price CSV and print a summary.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated tickers to keep, in order.
        #[arg(long, value_delimiter = ',')]
        tickers: Vec<String>,
        /// Write the validated frame here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model bundle on the training period.
    Train(RunArgs),
    /// Simulate synthetic test-period paths from a trained bundle.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle to load (default: <out>/model.bin).
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Draws shown next to the real series in the overlay CSVs.
        #[arg(long, default_value_t = 5)]
        overlay: usize,
    },
    /// Backtest the bundle's mean strategy and the Markowitz baseline.
    Backtest {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle to load (default: <out>/model.bin).
        #[arg(long, conflicts_with = "markowitz_only")]
        bundle: Option<PathBuf>,
        /// Run only the Markowitz baseline.
        #[arg(long)]
        markowitz_only: bool,
    },
    /// Render SVG charts for a backtest run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    tickers: Option<String>,
    #[arg(long)]
    split_date: Option<String>,
    #[arg(long)]
    model_kind: Option<String>,
    #[arg(long)]
    hist_len: Option<String>,
    #[arg(long)]
    future_len: Option<String>,
    #[arg(long)]
    latent_dim: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    /// Rebalance period in days or defensive/balanced/aggressive.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    n_draws: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    allow_forward_bias: bool,
    /// Any other configuration key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("tickers", &self.tickers),
            ("split_date", &self.split_date),
            ("model_kind", &self.model_kind),
            ("hist_len", &self.hist_len),
            ("future_len", &self.future_len),
            ("latent_dim", &self.latent_dim),
            ("epochs", &self.epochs),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("eta", &self.eta),
            ("n_draws", &self.n_draws),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.extra {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.allow_forward_bias {
            cfg.train.allow_forward_bias = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Invalid(format!("cannot start {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Ingest { data, tickers, out } => {
            let filter = (!tickers.is_empty()).then_some(tickers.as_slice());
            println!("{}", cmd_ingest(&data, filter, out.as_deref())?);
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let bundle = cmd_train(&cfg)?;
            if let Some(last) = bundle.training_log().last() {
                println!(
                    "trained {} for {} epochs: critic {:.6} generator {:.6}",
                    bundle.model_kind(),
                    last.epoch + 1,
                    last.critic_loss,
                    last.generator_loss
                );
            }
            println!("wrote {}", cfg.output_dir.join(BUNDLE_FILE).display());
        }
        Command::Simulate { run, bundle, overlay } => {
            let cfg = run.resolve()?;
            let bundle = bundle.unwrap_or_else(|| cfg.output_dir.join(BUNDLE_FILE));
            for p in cmd_simulate(&cfg, &bundle, overlay)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Backtest { run, bundle, markowitz_only } => {
            let cfg = run.resolve()?;
            let bundle = (!markowitz_only).then(|| bundle.unwrap_or_else(|| cfg.output_dir.join(BUNDLE_FILE)));
            for r in cmd_backtest(&cfg, bundle.as_deref())? {
                println!(
                    "{}: annual return {:.4}, annual Sharpe {:.4}{}",
                    r.name,
                    r.result.annual_return,
                    r.result.annual_sharpe,
                    if r.result.degenerate { " (degenerate)" } else { "" }
                );
            }
        }
        Command::Report { run } => {
            for p in cmd_report(&run)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
