//! Subcommand bodies. Each resolves its settings, runs the computation and
//! writes its artifacts into the output directory from this thread only.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sqr_core::bench::{self, GradApproxConfig, QarMaeConfig, GRAD_CHECKPOINTS};
use sqr_core::io::{self, LevelDiagnostics, RegressionData};
use sqr_core::objective::SolverMethod;
use sqr_core::select::{self, default_spar_grid, information_criteria, Criterion, SelectionReport};
use sqr_core::simulate::{simulate_qar, simulate_qar_replicate, QarModel, QarSpec};
use sqr_core::solve::{self, Solver};
use sqr_core::spectral::{self, QSpectrum, SpectralMethod};
use sqr_core::{build_basis, QuantileGrid, SplineBasis, SqrError, SqrFit, SqrProblem};

use crate::config::{
    build_solver, parse_floats, pick, require, resolve_grid, resolve_spar, FileConfig, SolverFlags, SparChoice,
    DEFAULT_GRID,
};

/// Input columns of a regression run.
#[derive(Clone, Debug, Default)]
pub struct DataFlags {
    pub input: Option<PathBuf>,
    pub response: Option<String>,
    pub regressors: Option<Vec<String>>,
    pub no_intercept: bool,
}

/// Quantile grid, knots and smoothing.
#[derive(Clone, Debug, Default)]
pub struct SmoothFlags {
    pub grid: Option<String>,
    pub nknots: Option<usize>,
    pub spar: Option<SparChoice>,
    pub c: Option<f64>,
    pub spar_grid: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct FitFlags {
    pub data: DataFlags,
    pub smooth: SmoothFlags,
    pub solver: SolverFlags,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct SqdftFlags {
    pub input: Option<PathBuf>,
    pub column: Option<String>,
    pub method: Option<String>,
    pub smooth: SmoothFlags,
    pub solver: SolverFlags,
    pub peaks: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct QperFlags {
    pub input: Option<PathBuf>,
    pub peaks: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct QarSimFlags {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub burn_in: Option<usize>,
    pub model: Option<String>,
    pub replicate: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct QarMaeFlags {
    pub runs: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub grid: Option<String>,
    pub spar_grid: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct GradApproxFlags {
    pub data: DataFlags,
    pub smooth: SmoothFlags,
    pub scale: Option<f64>,
    pub no_center: bool,
    pub checkpoints: Option<String>,
    pub ls_option: Option<String>,
    pub out: Option<PathBuf>,
}

/// Reads from the input file are reported as ingest failures.
fn ingest_err(path: &Path) -> impl Fn(SqrError) -> SqrError + '_ {
    move |e| match e {
        SqrError::Io(message) => SqrError::Ingest {
            row: 0,
            column: "(file)".into(),
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

fn out_dir(flag: Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    let dir = require(flag, file.out.clone(), "out")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn spar_grid(flag: Option<&str>, file: &FileConfig) -> Result<Vec<f64>> {
    Ok(match flag {
        Some(text) => parse_floats(text, ',')?,
        None => file.spar_grid.clone().unwrap_or_else(default_spar_grid),
    })
}

fn read_data(flags: &DataFlags, file: &FileConfig) -> Result<RegressionData> {
    let path = require(flags.input.clone(), file.input.clone(), "input")?;
    let response = require(flags.response.clone(), file.response.clone(), "response")?;
    let regressors = pick(flags.regressors.clone(), file.regressors.clone(), Vec::new());
    let intercept = if flags.no_intercept { false } else { file.intercept.unwrap_or(true) };
    let names: Vec<&str> = regressors.iter().map(String::as_str).collect();
    let data = io::read_regression(&path, &response, &names, intercept).map_err(ingest_err(&path))?;
    info!("read {} rows, {} design columns from {}", data.y.len(), data.x.ncols(), path.display());
    Ok(data)
}

/// Basis for `grid`; a single level gets the constant basis.
fn basis_for(grid: &QuantileGrid, nknots: Option<usize>) -> Result<SplineBasis> {
    if grid.len() == 1 {
        return Ok(SplineBasis::constant(grid));
    }
    Ok(build_basis(grid, nknots)?)
}

struct Prepared {
    data: RegressionData,
    problem: SqrProblem,
    choice: SparChoice,
    spar_grid: Vec<f64>,
    solver: Solver,
}

fn prepare(flags: &FitFlags, file: &FileConfig, default_spar: SparChoice) -> Result<Prepared> {
    let data = read_data(&flags.data, file)?;
    let grid = resolve_grid(flags.smooth.grid.as_deref(), file.grid.as_ref(), DEFAULT_GRID)?;
    let basis = basis_for(&grid, flags.smooth.nknots.or(file.nknots))?;
    let choice = resolve_spar(flags.smooth.spar, flags.smooth.c, file, default_spar)?;
    let solver = build_solver(&flags.solver, file.solver.as_ref())?;
    let problem = SqrProblem::new(data.x.clone(), data.y.clone(), grid, basis, 0.0)?;
    Ok(Prepared {
        data,
        problem,
        choice,
        spar_grid: spar_grid(flags.smooth.spar_grid.as_deref(), file)?,
        solver,
    })
}

#[derive(Serialize)]
struct Diagnostics {
    method: SolverMethod,
    objective: f64,
    fidelity_term: f64,
    penalty_term: f64,
    gap: Option<f64>,
    iterations: usize,
    converged: bool,
    spar: Option<f64>,
    criterion: Option<Criterion>,
    c: f64,
    n: usize,
    p: usize,
    k: usize,
    aic: f64,
    bic: f64,
    levels: Vec<LevelDiagnostics>,
}

fn diagnostics(prob: &SqrProblem, fit: &SqrFit, spar: Option<f64>, criterion: Option<Criterion>) -> Diagnostics {
    let crit = information_criteria(&fit.fidelity, &fit.complexity, prob.n());
    Diagnostics {
        method: fit.info.method,
        objective: fit.objective_value,
        fidelity_term: fit.parts.fidelity,
        penalty_term: fit.parts.penalty,
        gap: fit.info.gap,
        iterations: fit.info.iterations,
        converged: fit.info.converged,
        spar,
        criterion,
        c: prob.c(),
        n: prob.n(),
        p: prob.p(),
        k: prob.k(),
        aic: crit.aic,
        bic: crit.bic,
        levels: prob
            .grid()
            .levels()
            .iter()
            .enumerate()
            .map(|(l, &tau)| LevelDiagnostics {
                tau,
                fidelity: fit.fidelity[l],
                complexity: fit.complexity[l],
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct SelectionRow<'a> {
    spar: f64,
    c: f64,
    aic: f64,
    bic: f64,
    chosen_aic: bool,
    chosen_bic: bool,
    error: &'a str,
}

fn write_selection(path: &Path, report: &SelectionReport) -> Result<()> {
    let rows: Vec<SelectionRow> = report
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| SelectionRow {
            spar: r.spar,
            c: r.c,
            aic: r.aic,
            bic: r.bic,
            chosen_aic: i == report.chosen_aic,
            chosen_bic: i == report.chosen_bic,
            error: r.error.as_deref().unwrap_or(""),
        })
        .collect();
    Ok(io::write_rows(path, &rows)?)
}

/// `sqr fit`: beta.csv, theta.csv, diagnostics.json (and selection.csv
/// when the spar is chosen automatically).
pub fn fit(flags: FitFlags, file: &FileConfig) -> Result<()> {
    let prep = prepare(&flags, file, SparChoice::Auto(Criterion::Bic))?;
    let out = out_dir(flags.out.clone(), file)?;
    let base = &prep.problem;
    let single = base.l() == 1;
    if single && !matches!(prep.choice, SparChoice::Penalty(_)) {
        info!("single quantile level: the penalty vanishes, fitting with c = 0");
    }
    let (problem, fit, spar, criterion) = match prep.choice {
        _ if single => {
            let fit = solve::fit(base, &prep.solver)?;
            (base.clone(), fit, None, None)
        }
        SparChoice::Penalty(c) => {
            let prob = base.with_c(c)?;
            let fit = solve::fit(&prob, &prep.solver)?;
            (prob, fit, None, None)
        }
        SparChoice::Fixed(spar) => {
            let c = select::spar_to_c(base.x(), base.grid(), base.basis(), spar)?.c;
            let prob = base.with_c(c)?;
            let fit = solve::fit(&prob, &prep.solver)?;
            (prob, fit, Some(spar), None)
        }
        SparChoice::Auto(which) => {
            let report = select::select_spar(base, &prep.spar_grid, &prep.solver)?;
            write_selection(&out.join("selection.csv"), &report)?;
            let idx = report.chosen(which);
            let prob = base.with_c(report.records[idx].c)?;
            let fit = report.chosen_fit(which).clone();
            info!("{which:?} chose spar {}", report.records[idx].spar);
            (prob, fit, Some(report.records[idx].spar), Some(which))
        }
    };
    io::write_beta(&out.join("beta.csv"), problem.grid(), &prep.data.names, &fit.beta)?;
    io::write_theta(&out.join("theta.csv"), &prep.data.names, problem.k(), &fit.theta)?;
    write_json(&out.join("diagnostics.json"), &diagnostics(&problem, &fit, spar, criterion))?;
    info!("objective {} after {} iterations", fit.objective_value, fit.info.iterations);
    Ok(())
}

#[derive(Serialize)]
struct SelectionSummary {
    spar_aic: f64,
    spar_bic: f64,
    c_aic: f64,
    c_bic: f64,
}

/// `sqr select-spar`: selection.csv and selection.json.
pub fn select_spar(flags: FitFlags, file: &FileConfig) -> Result<()> {
    let prep = prepare(&flags, file, SparChoice::Auto(Criterion::Bic))?;
    if prep.problem.l() < 2 {
        return Err(SqrError::Config("spar selection needs at least 2 quantile levels".into()).into());
    }
    let out = out_dir(flags.out.clone(), file)?;
    let report = select::select_spar(&prep.problem, &prep.spar_grid, &prep.solver)?;
    write_selection(&out.join("selection.csv"), &report)?;
    write_json(
        &out.join("selection.json"),
        &SelectionSummary {
            spar_aic: report.chosen_spar(Criterion::Aic),
            spar_bic: report.chosen_spar(Criterion::Bic),
            c_aic: report.records[report.chosen_aic].c,
            c_bic: report.records[report.chosen_bic].c,
        },
    )
}

#[derive(Serialize)]
struct PeakRow {
    tau: f64,
    rank: usize,
    v: usize,
    frequency: f64,
    period: f64,
    qper: f64,
}

fn write_peaks(path: &Path, spec: &QSpectrum, count: usize) -> Result<()> {
    let n = spec.freqs.n() as f64;
    let mut rows = Vec::new();
    for (l, &tau) in spec.grid.levels().iter().enumerate() {
        for (rank, col) in spec.local_peaks(l, count).into_iter().enumerate() {
            let v = spec.freqs.index(col);
            rows.push(PeakRow {
                tau,
                rank: rank + 1,
                v,
                frequency: v as f64 / n,
                period: n / v as f64,
                qper: spec.qper[(l, col)],
            });
        }
    }
    Ok(io::write_rows(path, &rows)?)
}

#[derive(Serialize)]
struct SpectrumReport {
    n: usize,
    method: String,
    spar: Option<f64>,
    /// Frequency indices whose fits failed; their entries are NaN.
    masked: Vec<usize>,
    /// True when the series is constant: every fit is degenerate.
    degenerate: bool,
}

/// `sqr sqdft`: qdft.csv (long), qper_grid.csv, peaks.csv, report.json.
pub fn sqdft(flags: SqdftFlags, file: &FileConfig) -> Result<()> {
    let path = require(flags.input.clone(), file.input.clone(), "input")?;
    let column = require(flags.column.clone(), file.column.clone(), "column")?;
    let series = io::read_series(&path, &column).map_err(ingest_err(&path))?;
    let grid = resolve_grid(flags.smooth.grid.as_deref(), file.grid.as_ref(), DEFAULT_GRID)?;
    let solver = build_solver(&flags.solver, file.solver.as_ref())?;
    let method_name = pick(flags.method.clone(), file.method.clone(), "qr".into()).to_ascii_lowercase();
    let method = match method_name.as_str() {
        "qr" => SpectralMethod::Qr,
        "sqr" => match resolve_spar(flags.smooth.spar, flags.smooth.c, file, SparChoice::Auto(Criterion::Bic))? {
            SparChoice::Fixed(spar) => SpectralMethod::Sqr { spar },
            SparChoice::Auto(criterion) => SpectralMethod::SqrAuto {
                criterion,
                spar_grid: spar_grid(flags.smooth.spar_grid.as_deref(), file)?,
            },
            SparChoice::Penalty(_) => {
                return Err(SqrError::Config("sqdft takes a spar value or aic/bic, not a raw penalty".into()).into())
            }
        },
        other => return Err(SqrError::Config(format!("unknown spectral method {other:?} (qr or sqr)")).into()),
    };
    let degenerate = series.iter().all(|&v| v == series[0]);
    if degenerate {
        warn!("series is constant: every trigonometric fit is degenerate and the periodogram is zero");
    }
    let out = out_dir(flags.out.clone(), file)?;
    let spec = spectral::sqdft(&series, &grid, &method, &solver)?;
    if !spec.failures.is_empty() {
        warn!("{} frequencies failed and are masked", spec.failures.len());
    }
    write_spectrum(&out, &spec, pick(flags.peaks, file.peaks, 3), "qdft.csv")?;
    write_json(
        &out.join("report.json"),
        &SpectrumReport {
            n: series.len(),
            method: method_name,
            spar: spec.spar,
            masked: spec.failures.iter().map(|(c, _)| spec.freqs.index(*c)).collect(),
            degenerate,
        },
    )
}

fn write_spectrum(out: &Path, spec: &QSpectrum, peaks: usize, long_name: &str) -> Result<()> {
    spec.write_long_csv(&out.join(long_name))?;
    spec.write_plot_grid(&out.join("qper_grid.csv"))?;
    write_peaks(&out.join("peaks.csv"), spec, peaks)
}

/// `sqr qper`: periodogram artifacts recomputed from a QDFT CSV.
pub fn qper(flags: QperFlags, file: &FileConfig) -> Result<()> {
    let path = require(flags.input.clone(), file.input.clone(), "input")?;
    let spec = spectral::read_qdft_csv(&path).map_err(ingest_err(&path))?;
    let out = out_dir(flags.out.clone(), file)?;
    write_spectrum(&out, &spec, pick(flags.peaks, file.peaks, 3), "qper.csv")
}

/// `sqr qar-sim`: series.csv with columns `t, y`.
pub fn qar_sim(flags: QarSimFlags, file: &FileConfig) -> Result<()> {
    let defaults = QarSpec::default();
    let model: QarModel = match flags.model.clone().or(file.model.clone()) {
        Some(m) => m.parse()?,
        None => defaults.model,
    };
    let spec = QarSpec {
        n: pick(flags.n, file.n, defaults.n),
        seed: pick(flags.seed, file.seed, defaults.seed),
        burn_in: pick(flags.burn_in, file.burn_in, defaults.burn_in),
        model,
        ..defaults
    };
    let series = match flags.replicate.or(file.replicate) {
        Some(r) => simulate_qar_replicate(&spec, r)?,
        None => simulate_qar(&spec)?,
    };
    let out = out_dir(flags.out.clone(), file)?;
    io::write_series(&out.join("series.csv"), "y", &series)?;
    Ok(())
}

#[derive(Serialize)]
struct QarMaeJson<'a> {
    runs: usize,
    completed: usize,
    failures: &'a [(usize, String)],
    bic_win_rate: f64,
    summary: &'a [bench::MaeSummary],
}

/// `sqr bench qar-mae`: runs.csv, summary.csv, report.json.
pub fn bench_qar_mae(flags: QarMaeFlags, file: &FileConfig) -> Result<()> {
    let runs = pick(flags.runs, file.runs, 100);
    let mut cfg = QarMaeConfig::new(runs, pick(flags.seed, file.seed, 1))?;
    cfg.spec.n = pick(flags.n, file.n, cfg.spec.n);
    cfg.grid = resolve_grid(flags.grid.as_deref(), file.grid.as_ref(), DEFAULT_GRID)?;
    cfg.spar_grid = spar_grid(flags.spar_grid.as_deref(), file)?;
    let out = out_dir(flags.out.clone(), file)?;
    let report = bench::qar_mae(&cfg)?;
    io::write_rows(&out.join("runs.csv"), &report.runs)?;
    io::write_rows(&out.join("summary.csv"), &report.summary)?;
    write_json(
        &out.join("report.json"),
        &QarMaeJson {
            runs,
            completed: report.runs.len(),
            failures: &report.failures,
            bic_win_rate: report.bic_win_rate(),
            summary: &report.summary,
        },
    )
}

/// Divides every non-intercept column by `scale` and optionally centres it.
fn rescale(x: &DMatrix<f64>, intercept: bool, scale: f64, center: bool) -> DMatrix<f64> {
    let mut x = x.clone();
    let first = usize::from(intercept);
    for j in first..x.ncols() {
        let mut col = x.column_mut(j);
        col /= scale;
        if center {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    x
}

#[derive(Serialize)]
struct GradApproxJson {
    lp_objective: f64,
    spar: Option<f64>,
    c: f64,
    checkpoints: Vec<usize>,
}

/// `sqr bench grad-approx`: table.csv (long), table_wide.csv, report.json.
///
/// Without `--input` the bundled Engel data is used (`foodexp ~ income`).
pub fn bench_grad_approx(flags: GradApproxFlags, file: &FileConfig) -> Result<()> {
    let scale = pick(flags.scale, file.scale, 1000.0);
    if !(scale.is_finite() && scale > 0.0) {
        return Err(SqrError::Config(format!("scale must be positive, got {scale}")).into());
    }
    let center = if flags.no_center { false } else { file.center.unwrap_or(true) };
    let intercept = !flags.data.no_intercept && file.intercept.unwrap_or(true);
    let data = match flags.data.input.clone().or(file.input.clone()) {
        Some(_) => read_data(&flags.data, file)?,
        None => {
            let (income, food) = sqr_core::data::engel();
            let n = income.len();
            let offset = usize::from(intercept);
            RegressionData {
                x: DMatrix::from_fn(n, 1 + offset, |i, j| if j < offset { 1.0 } else { income[i] }),
                y: DVector::from_vec(food),
                names: Vec::new(),
            }
        }
    };
    let x = rescale(&data.x, intercept, scale, center);
    let grid = resolve_grid(flags.smooth.grid.as_deref(), file.grid.as_ref(), "0.02:0.98:0.01")?;
    let basis = basis_for(&grid, flags.smooth.nknots.or(file.nknots))?;
    let base = SqrProblem::new(x, data.y, grid, basis, 0.0)?;
    let ip = Solver::default();
    let (c, spar) = match resolve_spar(flags.smooth.spar, flags.smooth.c, file, SparChoice::Auto(Criterion::Bic))? {
        SparChoice::Penalty(c) => (c, None),
        SparChoice::Fixed(spar) => (select::spar_to_c(base.x(), base.grid(), base.basis(), spar)?.c, Some(spar)),
        SparChoice::Auto(which) => {
            let report = select::select_spar(&base, &spar_grid(flags.smooth.spar_grid.as_deref(), file)?, &ip)?;
            let idx = report.chosen(which);
            (report.records[idx].c, Some(report.records[idx].spar))
        }
    };
    let prob = base.with_c(c)?;
    let checkpoints = match flags.checkpoints.as_deref() {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| SqrError::Config(format!("checkpoint {s:?} is not an iteration count")))
            })
            .collect::<std::result::Result<_, _>>()?,
        None => file.checkpoints.clone().unwrap_or_else(|| GRAD_CHECKPOINTS.to_vec()),
    };
    let mut cfg = GradApproxConfig {
        checkpoints,
        ..GradApproxConfig::default()
    };
    let ls_option = flags
        .ls_option
        .clone()
        .or_else(|| file.solver.as_ref().and_then(|sv| sv.ls_option.clone()));
    if let Some(opt) = ls_option {
        let opt = opt.parse()?;
        for (_, g) in cfg.solvers.iter_mut() {
            g.ls_option = opt;
        }
    }
    let out = out_dir(flags.out.clone(), file)?;
    let report = bench::grad_approx(&prob, &cfg)?;
    io::write_rows(&out.join("table.csv"), &report.rows)?;
    write_wide(&out.join("table_wide.csv"), &report, &cfg)?;
    write_json(
        &out.join("report.json"),
        &GradApproxJson {
            lp_objective: report.lp_objective,
            spar,
            c,
            checkpoints: cfg.checkpoints.clone(),
        },
    )
}

/// One row per algorithm, one column per checkpoint.
fn write_wide(path: &Path, report: &bench::GradApproxReport, cfg: &GradApproxConfig) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["algorithm".to_string()];
    header.extend(cfg.checkpoints.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (label, _) in &cfg.solvers {
        let mut rec = vec![label.clone()];
        rec.extend(
            cfg.checkpoints
                .iter()
                .map(|&it| report.error(label, it).map_or_else(String::new, io::fmt_float)),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<sqr_core::io::CsvWriter> {
    Ok(sqr_core::io::csv_writer(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_leaves_intercept() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1000.0, 1.0, 2000.0, 1.0, 3000.0]);
        let s = rescale(&x, true, 1000.0, true);
        assert_eq!(s.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0; 3]);
        assert_eq!(s.column(1).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
    }
}
