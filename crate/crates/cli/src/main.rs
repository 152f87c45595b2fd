//! `sqr`: spline quantile regression from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input (ingest) error,
//! 4 solver failure, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use sqr_core::SqrError;

use commands::{DataFlags, FitFlags, GradApproxFlags, QarMaeFlags, QarSimFlags, QperFlags, SmoothFlags, SqdftFlags};
use config::{FileConfig, SolverFlags, SparChoice};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INGEST: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "sqr", version, about = "Spline quantile regression across a grid of quantile levels")]
struct Cli {
    /// JSON config file. Flags given on the command line override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for parallel loops (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr; repeat for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit SQR to a CSV regression and write beta.csv, theta.csv, diagnostics.json.
    Fit(FitArgs),
    /// Score every spar on a grid by AIC and BIC and write selection.csv.
    SelectSpar(FitArgs),
    /// Quantile DFT and periodogram of one series column.
    Sqdft(SqdftArgs),
    /// Recompute periodogram artifacts from a saved qdft.csv.
    Qper(QperArgs),
    /// Simulate a quantile autoregressive series.
    QarSim(QarSimArgs),
    /// Benchmark harnesses.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Monte-Carlo MAE of QR, SQR-AIC and SQR-BIC on simulated QAR series.
    QarMae(QarMaeArgs),
    /// Error of BFGS, ADAM and GRAD against the exact LP solution by iteration.
    GradApprox(GradApproxArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV (header row required).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    response: Option<String>,
    /// Regressor columns, comma separated. Omit for an intercept-only model.
    #[arg(long, value_delimiter = ',')]
    regressors: Option<Vec<String>>,
    /// Do not add an intercept column.
    #[arg(long)]
    no_intercept: bool,
}

impl From<DataArgs> for DataFlags {
    fn from(a: DataArgs) -> Self {
        DataFlags {
            input: a.input,
            response: a.response,
            regressors: a.regressors,
            no_intercept: a.no_intercept,
        }
    }
}

#[derive(Args, Debug)]
struct SmoothArgs {
    /// Quantile levels: `start:stop:step` or a comma list.
    #[arg(long)]
    grid: Option<String>,
    /// Total number of knots including both boundary knots.
    #[arg(long)]
    nknots: Option<usize>,
    /// Smoothing: a spar value, or `aic` / `bic` to select one.
    #[arg(long, allow_hyphen_values = true)]
    spar: Option<SparChoice>,
    /// Raw penalty weight instead of spar.
    #[arg(long)]
    c: Option<f64>,
    /// Candidate spars for selection, comma separated (default -2, -1.8, ..., 2).
    #[arg(long, allow_hyphen_values = true)]
    spar_grid: Option<String>,
}

impl From<SmoothArgs> for SmoothFlags {
    fn from(a: SmoothArgs) -> Self {
        SmoothFlags {
            grid: a.grid,
            nknots: a.nknots,
            spar: a.spar,
            c: a.c,
            spar_grid: a.spar_grid,
        }
    }
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// `ip` (exact interior point), `bfgs`, `adam` or `grad`.
    #[arg(long)]
    solver: Option<String>,
    /// Iteration limit of the chosen solver.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Interior-point relative duality-gap tolerance.
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Initial step size of the gradient solvers.
    #[arg(long)]
    step0: Option<f64>,
    /// GRAD line-search fallback option: i, ii, iii or iv.
    #[arg(long)]
    ls_option: Option<String>,
}

impl From<SolverArgs> for SolverFlags {
    fn from(a: SolverArgs) -> Self {
        SolverFlags {
            method: a.solver,
            max_iter: a.max_iter,
            gap_tol: a.gap_tol,
            step0: a.step0,
            ls_option: a.ls_option,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<FitArgs> for FitFlags {
    fn from(a: FitArgs) -> Self {
        FitFlags {
            data: a.data.into(),
            smooth: a.smooth.into(),
            solver: a.solver.into(),
            out: a.out,
        }
    }
}

#[derive(Args, Debug)]
struct SqdftArgs {
    /// Input CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Series column.
    #[arg(long)]
    column: Option<String>,
    /// `qr` (independent fits per level) or `sqr`.
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Local periodogram peaks reported per level.
    #[arg(long)]
    peaks: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QperArgs {
    /// qdft.csv written by `sqr sqdft`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Local periodogram peaks reported per level.
    #[arg(long)]
    peaks: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QarSimArgs {
    /// Series length after burn-in.
    #[arg(long)]
    n: Option<usize>,
    /// RNG seed (default 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Leading draws discarded before the kept series (default 200).
    #[arg(long)]
    burn_in: Option<usize>,
    /// `kinked`, `linear` or `white-noise`.
    #[arg(long)]
    model: Option<String>,
    /// Draw replicate `i` (independent stream of the same seed).
    #[arg(long)]
    replicate: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QarMaeArgs {
    /// Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Series length.
    #[arg(long)]
    n: Option<usize>,
    /// RNG seed (default 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Quantile levels: `start:stop:step` or a comma list.
    #[arg(long)]
    grid: Option<String>,
    /// Candidate spars, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    spar_grid: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradApproxArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    /// Divide regressors by this before fitting.
    #[arg(long)]
    scale: Option<f64>,
    /// Do not centre the regressors.
    #[arg(long)]
    no_center: bool,
    /// Iteration checkpoints, comma separated.
    #[arg(long)]
    checkpoints: Option<String>,
    /// GRAD line-search fallback option: i, ii, iii or iv.
    #[arg(long)]
    ls_option: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<SqrError>()) {
        Some(e) if e.is_solver_error() => EXIT_SOLVER,
        Some(SqrError::Ingest { .. } | SqrError::Shape(_) | SqrError::InvalidProblem(_)) => EXIT_INGEST,
        Some(
            SqrError::Config(_)
            | SqrError::InvalidGrid(_)
            | SqrError::InvalidKnotCount { .. }
            | SqrError::OutOfSpan { .. }
            | SqrError::Domain(_)
            | SqrError::DegeneratePenalty,
        ) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(threads) = cli.threads.or(file.threads) {
        if threads == 0 {
            return Err(SqrError::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit(a.into(), &file),
        Command::SelectSpar(a) => commands::select_spar(a.into(), &file),
        Command::Sqdft(a) => commands::sqdft(
            SqdftFlags {
                input: a.input,
                column: a.column,
                method: a.method,
                smooth: a.smooth.into(),
                solver: a.solver.into(),
                peaks: a.peaks,
                out: a.out,
            },
            &file,
        ),
        Command::Qper(a) => commands::qper(
            QperFlags {
                input: a.input,
                peaks: a.peaks,
                out: a.out,
            },
            &file,
        ),
        Command::QarSim(a) => commands::qar_sim(
            QarSimFlags {
                n: a.n,
                seed: a.seed,
                burn_in: a.burn_in,
                model: a.model,
                replicate: a.replicate,
                out: a.out,
            },
            &file,
        ),
        Command::Bench(BenchCommand::QarMae(a)) => commands::bench_qar_mae(
            QarMaeFlags {
                runs: a.runs,
                n: a.n,
                seed: a.seed,
                grid: a.grid,
                spar_grid: a.spar_grid,
                out: a.out,
            },
            &file,
        ),
        Command::Bench(BenchCommand::GradApprox(a)) => commands::bench_grad_approx(
            GradApproxFlags {
                data: a.data.into(),
                smooth: a.smooth.into(),
                scale: a.scale,
                no_center: a.no_center,
                checkpoints: a.checkpoints,
                ls_option: a.ls_option,
                out: a.out,
            },
            &file,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
