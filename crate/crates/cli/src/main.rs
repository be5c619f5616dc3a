//! `vcg`: ingest, simulate, fit, forecast, score, export and backtest.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vcg_core::forecast::Propagation;
use vcg_core::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "vcg", version, about = "VECM-copula-GARCH forecasting and evaluation")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read raw price CSVs, align them on dates, optionally normalize, and
    /// write a panel CSV.
    Ingest(IngestArgs),
    /// Simulate a synthetic panel from the model.
    Simulate(SimulateArgs),
    /// Estimate a model on a panel and write the fit as JSON.
    Fit(FitArgs),
    /// Forecast trajectories from a fitted model.
    Forecast(ForecastArgs),
    /// Score an ensemble against realized values.
    Score(ScoreArgs),
    /// Run (or replay) a rolling-window forecasting study.
    Backtest(BacktestArgs),
    /// Write predictive quantiles of an ensemble as CSV.
    ExportQuantiles(ExportQuantilesArgs),
    /// Write the filtered pairwise correlation paths of a fit as CSV.
    ExportCorrPath(ExportCorrArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Join {
    Inner,
    Ffill,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    PointUpdate,
    PerTrajectory,
}

impl From<Mode> for Propagation {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PointUpdate => Propagation::PointUpdate,
            Mode::PerTrajectory => Propagation::PerTrajectory,
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Raw CSV files; every value column becomes one series.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "date")]
    date_column: String,
    /// Value columns to keep (default: all).
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    #[arg(long, value_enum, default_value = "ffill")]
    join: Join,
    /// Longest run of missing rows forward fill may bridge.
    #[arg(long, default_value_t = 5)]
    max_gap: usize,
    /// Normalization file (emission factors, price index, exchange rates).
    #[arg(long)]
    normalize: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model id, e.g. `rw_st_r` or `vecm1_st_rt_lev_ncp`.
    #[arg(long, default_value = "rw_st_r")]
    spec: String,
    /// Parameter file as written by `--truth`; built-in values when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Number of series for the built-in parameters.
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Rows to write.
    #[arg(long)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows simulated and dropped before the output.
    #[arg(long, default_value_t = 500)]
    discard: usize,
    /// Starting level of every series.
    #[arg(long, default_value_t = 100.0)]
    start: f64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the true parameters (default: next to `--out`).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Panel CSV (relative paths also searched in $VCG_DATA_DIR).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: String,
    /// Use only the last N rows.
    #[arg(long)]
    last: Option<usize>,
    /// Also compute standard errors.
    #[arg(long)]
    stderr: bool,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fit JSON from `vcg fit` on the same data.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    last: Option<usize>,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    #[arg(long, default_value_t = 2048)]
    trajectories: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "point-update")]
    mode: Mode,
    /// Cap for exponentiated log-scale forecasts.
    #[arg(long, default_value_t = vcg_core::data::DEFAULT_CAP)]
    cap: f64,
    /// Ensemble CSV (gzip-compressed when the name ends in `.gz`).
    #[arg(long)]
    out: PathBuf,
    /// Also write a JSON summary with means and quantiles.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    ensemble: PathBuf,
    /// Panel holding the realized values after the origin date.
    #[arg(long)]
    data: PathBuf,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    #[arg(long)]
    data: PathBuf,
    /// Study configuration (TOML).
    #[arg(long, required_unless_present = "replay")]
    config: Option<PathBuf>,
    /// Re-run the study recorded in this manifest.
    #[arg(long, conflicts_with = "config")]
    replay: Option<PathBuf>,
    /// Results directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportQuantilesArgs {
    #[arg(long)]
    ensemble: PathBuf,
    /// Probabilities in percent.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = vcg_core::forecast::DEFAULT_PERCENTS)]
    probs: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportCorrArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    last: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|e| e.downcast_ref::<vcg_core::Error>()).map(vcg_core::Error::kind);
    match kind {
        Some(ErrorKind::Numerical) => 2,
        Some(ErrorKind::PartialStudy) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.jobs {
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
        #[cfg(not(feature = "parallel"))]
        let _ = n;
    }
    match commands::run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
