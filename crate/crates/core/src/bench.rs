//! Benchmark harnesses: QAR coefficient accuracy (QR vs SQR with AIC/BIC)
//! and gradient-solver approximation error against the exact LP solution.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{build_basis, QuantileGrid};
use crate::error::{Result, SqrError};
use crate::grad::{self, GradAlgorithm, GradConfig, LsOption};
use crate::ip::IpConfig;
use crate::objective::SqrProblem;
use crate::select::{self, default_spar_grid, Criterion};
use crate::simulate::{mae, qar_design, simulate_qar_replicate, QarSpec};
use crate::solve::{self, Solver};

#[derive(Clone, Debug)]
pub struct QarMaeConfig {
    pub spec: QarSpec,
    pub runs: usize,
    pub grid: QuantileGrid,
    pub spar_grid: Vec<f64>,
    pub ip: IpConfig,
}

impl QarMaeConfig {
    /// `n = 200` on the grid `0.05, 0.06, ..., 0.95`.
    pub fn new(runs: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            spec: QarSpec {
                seed,
                ..QarSpec::default()
            },
            runs,
            grid: QuantileGrid::from_range(0.05, 0.95, 0.01)?,
            spar_grid: default_spar_grid(),
            ip: IpConfig::default(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QarMaeRun {
    pub run: usize,
    pub qr_mae0: f64,
    pub qr_mae1: f64,
    pub qr_total: f64,
    pub aic_mae0: f64,
    pub aic_mae1: f64,
    pub aic_total: f64,
    pub bic_mae0: f64,
    pub bic_mae1: f64,
    pub bic_total: f64,
    pub spar_aic: f64,
    pub spar_bic: f64,
}

/// One row per estimator, averaged over runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaeSummary {
    pub method: String,
    pub mae0: f64,
    pub mae1: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct QarMaeReport {
    pub runs: Vec<QarMaeRun>,
    pub summary: Vec<MaeSummary>,
    /// Runs whose SQR solve failed: `(run, message)`.
    pub failures: Vec<(usize, String)>,
}

impl QarMaeReport {
    pub fn summary_for(&self, method: &str) -> Option<&MaeSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Fraction of runs where SQR-BIC total MAE is strictly below QR.
    pub fn bic_win_rate(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().filter(|r| r.bic_total < r.qr_total).count() as f64 / self.runs.len() as f64
    }
}

fn qar_run(cfg: &QarMaeConfig, basis: &crate::basis::SplineBasis, truth: &DMatrix<f64>, run: usize) -> Result<QarMaeRun> {
    let series = simulate_qar_replicate(&cfg.spec, run as u64)?;
    let (x, y) = qar_design(&series)?;
    let qr = solve::independent_qr(&x, &y, &cfg.grid, &cfg.ip)?;
    let prob = SqrProblem::new(x, y, cfg.grid.clone(), basis.clone(), 0.0)?;
    let report = select::select_spar(&prob, &cfg.spar_grid, &Solver::InteriorPoint(cfg.ip.clone()))?;
    let qr_err = mae(&qr, truth)?;
    let aic_err = mae(&report.chosen_fit(Criterion::Aic).beta, truth)?;
    let bic_err = mae(&report.chosen_fit(Criterion::Bic).beta, truth)?;
    Ok(QarMaeRun {
        run,
        qr_mae0: qr_err.per_coef[0],
        qr_mae1: qr_err.per_coef[1],
        qr_total: qr_err.total,
        aic_mae0: aic_err.per_coef[0],
        aic_mae1: aic_err.per_coef[1],
        aic_total: aic_err.total,
        bic_mae0: bic_err.per_coef[0],
        bic_mae1: bic_err.per_coef[1],
        bic_total: bic_err.total,
        spar_aic: report.chosen_spar(Criterion::Aic),
        spar_bic: report.chosen_spar(Criterion::Bic),
    })
}

/// Monte-Carlo comparison of QR and SQR (AIC and BIC spar) on simulated QAR
/// series. Replicate `i` uses stream `i` of the configured seed.
pub fn qar_mae(cfg: &QarMaeConfig) -> Result<QarMaeReport> {
    if cfg.runs == 0 {
        return Err(SqrError::Config("runs must be >= 1".into()));
    }
    let basis = build_basis(&cfg.grid, None)?;
    let truth = cfg.spec.truth_on_grid(&cfg.grid)?;
    let results: Vec<Result<QarMaeRun>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| qar_run(cfg, &basis, &truth, run))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => runs.push(r),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if runs.is_empty() {
        return Err(SqrError::NotConverged("every benchmark run failed".into()));
    }
    let m = runs.len() as f64;
    let avg = |f: fn(&QarMaeRun) -> f64| runs.iter().map(f).sum::<f64>() / m;
    let summary = vec![
        MaeSummary {
            method: "QR".into(),
            mae0: avg(|r| r.qr_mae0),
            mae1: avg(|r| r.qr_mae1),
            total: avg(|r| r.qr_total),
        },
        MaeSummary {
            method: "SQR-AIC".into(),
            mae0: avg(|r| r.aic_mae0),
            mae1: avg(|r| r.aic_mae1),
            total: avg(|r| r.aic_total),
        },
        MaeSummary {
            method: "SQR-BIC".into(),
            mae0: avg(|r| r.bic_mae0),
            mae1: avg(|r| r.bic_mae1),
            total: avg(|r| r.bic_total),
        },
    ];
    Ok(QarMaeReport {
        runs,
        summary,
        failures,
    })
}

/// Iteration checkpoints of the approximation-error table.
pub const GRAD_CHECKPOINTS: [usize; 9] = [0, 50, 100, 150, 200, 300, 400, 500, 1000];

#[derive(Clone, Debug)]
pub struct GradApproxConfig {
    pub checkpoints: Vec<usize>,
    /// Solvers to trace, labelled.
    pub solvers: Vec<(String, GradConfig)>,
    pub ip: IpConfig,
}

impl Default for GradApproxConfig {
    fn default() -> Self {
        let mk = |algorithm, ls_option| GradConfig {
            algorithm,
            ls_option,
            ..GradConfig::default()
        };
        Self {
            checkpoints: GRAD_CHECKPOINTS.to_vec(),
            solvers: vec![
                ("BFGS".into(), mk(GradAlgorithm::Bfgs, LsOption::I)),
                ("ADAM".into(), mk(GradAlgorithm::Adam, LsOption::I)),
                ("GRAD".into(), mk(GradAlgorithm::Grad, LsOption::I)),
            ],
            ip: IpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradApproxRow {
    pub algorithm: String,
    pub iteration: usize,
    /// Total MAE of the coefficient functions against the LP solution.
    pub error: f64,
    pub objective: f64,
    /// `false` when the solver stopped before this checkpoint; the row then
    /// reports the final iterate.
    pub reached: bool,
}

#[derive(Clone, Debug)]
pub struct GradApproxReport {
    pub lp_objective: f64,
    pub rows: Vec<GradApproxRow>,
}

impl GradApproxReport {
    fn row(&self, algorithm: &str, iteration: usize) -> Option<&GradApproxRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.iteration == iteration)
    }

    pub fn error(&self, algorithm: &str, iteration: usize) -> Option<f64> {
        self.row(algorithm, iteration).map(|r| r.error)
    }

    pub fn objective(&self, algorithm: &str, iteration: usize) -> Option<f64> {
        self.row(algorithm, iteration).map(|r| r.objective)
    }
}

/// Traces each gradient solver from the QR warm start and measures its
/// distance to the exact LP coefficients at the checkpoints.
pub fn grad_approx(prob: &SqrProblem, cfg: &GradApproxConfig) -> Result<GradApproxReport> {
    let lp_fit = solve::fit(prob, &Solver::InteriorPoint(cfg.ip.clone()))?;
    let theta0 = solve::qr_warm_start(prob, &cfg.ip)?;
    let max_iter = cfg.checkpoints.iter().copied().max().unwrap_or(0);
    let traces: Vec<Result<Vec<GradApproxRow>>> = cfg
        .solvers
        .par_iter()
        .map(|(label, base)| {
            let gcfg = GradConfig {
                max_iter,
                checkpoints: cfg.checkpoints.clone(),
                ..base.clone()
            };
            let (theta_end, trace) = grad::solve(prob, theta0.clone(), &gcfg)?;
            cfg.checkpoints
                .iter()
                .map(|&it| {
                    let (theta, reached): (&DVector<f64>, bool) = match trace.snapshot(it) {
                        Some(t) => (t, true),
                        None => (&theta_end, false),
                    };
                    let beta = prob.coefficients(theta)?;
                    Ok(GradApproxRow {
                        algorithm: label.clone(),
                        iteration: it,
                        error: mae(&beta, &lp_fit.beta)?.total,
                        objective: crate::objective::objective(prob, theta)?,
                        reached,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for t in traces {
        rows.extend(t?);
    }
    Ok(GradApproxReport {
        lp_objective: lp_fit.objective_value,
        rows,
    })
}

/// Engel problem on `grid`: `foodexp ~ 1 + (income / scale - mean)`.
pub fn engel_problem(grid: &QuantileGrid, scale: f64, c: f64) -> Result<SqrProblem> {
    let (income, food) = crate::data::engel();
    let n = income.len();
    let mean = income.iter().map(|v| v / scale).sum::<f64>() / n as f64;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { income[i] / scale - mean });
    let y = DVector::from_vec(food);
    let basis = build_basis(grid, None)?;
    SqrProblem::new(x, y, grid.clone(), basis, c)
}
