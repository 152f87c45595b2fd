//! Smoothing-parameter selection.
//!
//! The smoothing parameter is reparameterised as `c = r * 1000^(spar - 1)`,
//! where `r` balances the size of the data term against the size of the
//! curvature term. Fits over a `spar` grid are scored by AIC and BIC built
//! from per-level fidelity (mean check loss) and complexity (number of
//! observations the fitted quantile passes through).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{QuantileGrid, SplineBasis};
use crate::error::{Result, SqrError};
use crate::objective::{check_loss, SqrFit, SqrProblem};
use crate::solve::{fit, Solver};

/// Absolute residual below which an observation counts as interpolated:
/// `1e-6 * max(1, median |y|)`.
pub fn default_threshold(y: &DVector<f64>) -> f64 {
    let mut abs: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let median = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    1e-6 * median.max(1.0)
}

/// Per-level fidelity `v_l` and complexity `m_l` from an `L x n` residual matrix.
pub fn fidelity_complexity_from_residuals(
    levels: &[f64],
    residuals: &DMatrix<f64>,
    threshold: f64,
) -> (Vec<f64>, Vec<usize>) {
    let n = residuals.ncols() as f64;
    levels
        .iter()
        .enumerate()
        .map(|(lev, &tau)| {
            let row = residuals.row(lev);
            let v = row.iter().map(|&r| check_loss(tau, r)).sum::<f64>() / n;
            let m = row.iter().filter(|r| r.abs() <= threshold).count();
            (v, m)
        })
        .unzip()
}

/// Fidelity and complexity of `fit` with an explicit interpolation threshold.
pub fn fidelity_complexity(
    prob: &SqrProblem,
    fit: &SqrFit,
    threshold: f64,
) -> (Vec<f64>, Vec<usize>) {
    fidelity_complexity_from_residuals(prob.grid().levels(), &fit.residuals, threshold)
}

/// The `spar <-> c` mapping for one design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SparMap {
    pub r: f64,
    pub spar: f64,
    pub c: f64,
}

/// `r = [n^-1 sum_l ||X Phi(tau_l)||_1] / [sum_l w_l ||Phi''(tau_l)||_1]`
/// with entrywise matrix 1-norms.
pub fn spar_ratio(x: &DMatrix<f64>, grid: &QuantileGrid, basis: &SplineBasis) -> Result<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols() as f64;
    let x_abs: Vec<f64> = x.column_iter().map(|c| c.iter().map(|v| v.abs()).sum()).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for lev in 0..grid.len() {
        let phi_abs: f64 = basis.phi().row(lev).iter().map(|v| v.abs()).sum();
        let dd_abs: f64 = basis.phi_dd().row(lev).iter().map(|v| v.abs()).sum();
        num += x_abs.iter().sum::<f64>() * phi_abs;
        den += grid.weights()[lev] * p * dd_abs;
    }
    if !(den > 0.0) {
        return Err(SqrError::DegeneratePenalty);
    }
    Ok(num / n / den)
}

pub fn spar_to_c(
    x: &DMatrix<f64>,
    grid: &QuantileGrid,
    basis: &SplineBasis,
    spar: f64,
) -> Result<SparMap> {
    let r = spar_ratio(x, grid, basis)?;
    Ok(SparMap {
        r,
        spar,
        c: r * 1000f64.powf(spar - 1.0),
    })
}

/// AIC and BIC of one fit. Both are `-inf` when the mean fidelity is zero
/// (exact interpolation at every level).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Criteria {
    pub aic: f64,
    pub bic: f64,
}

impl Criteria {
    pub fn get(&self, which: Criterion) -> f64 {
        match which {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }

    pub fn is_interpolating(&self) -> bool {
        self.bic == f64::NEG_INFINITY
    }
}

pub fn information_criteria(v: &[f64], m: &[usize], n: usize) -> Criteria {
    let l = v.len() as f64;
    let v_mean = v.iter().sum::<f64>() / l;
    let m_mean = m.iter().map(|&x| x as f64).sum::<f64>() / l;
    if !(v_mean > 0.0) {
        return Criteria {
            aic: f64::NEG_INFINITY,
            bic: f64::NEG_INFINITY,
        };
    }
    let n = n as f64;
    let fit_term = 2.0 * n * v_mean.ln();
    Criteria {
        aic: fit_term + 2.0 * m_mean,
        bic: fit_term + n.ln() * m_mean,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

impl std::str::FromStr for Criterion {
    type Err = SqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(SqrError::Config(format!("unknown criterion {other:?}"))),
        }
    }
}

/// `-2, -1.8, ..., 2`.
pub fn default_spar_grid() -> Vec<f64> {
    (0..=20).map(|i| ((-2.0 + 0.2 * i as f64) * 1e10).round() / 1e10).collect()
}

/// Index of the smallest finite score; ties go to the earliest (smallest
/// spar). When no score is finite, all fits interpolate and the last
/// (largest spar) entry among the candidates is chosen.
pub fn choose_index(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
        .or_else(|| scores.iter().rposition(|s| s.is_some()))
}

/// One grid point of a selection run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparRecord {
    pub spar: f64,
    pub c: f64,
    pub fidelity: Vec<f64>,
    pub complexity: Vec<usize>,
    pub aic: f64,
    pub bic: f64,
    pub error: Option<String>,
}

/// Outcome of [`select_spar`].
#[derive(Clone, Debug)]
pub struct SelectionReport {
    pub records: Vec<SparRecord>,
    pub chosen_aic: usize,
    pub chosen_bic: usize,
    /// Fit for each grid point (`None` where the solve failed).
    pub fits: Vec<Option<SqrFit>>,
}

impl SelectionReport {
    pub fn chosen(&self, which: Criterion) -> usize {
        match which {
            Criterion::Aic => self.chosen_aic,
            Criterion::Bic => self.chosen_bic,
        }
    }

    pub fn chosen_fit(&self, which: Criterion) -> &SqrFit {
        self.fits[self.chosen(which)]
            .as_ref()
            .expect("chosen grid point always has a fit")
    }

    pub fn chosen_spar(&self, which: Criterion) -> f64 {
        self.records[self.chosen(which)].spar
    }
}

fn check_spar_grid(spar_grid: &[f64]) -> Result<()> {
    if spar_grid.is_empty() {
        return Err(SqrError::Config("empty spar grid".into()));
    }
    if spar_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SqrError::Config("spar grid must be increasing".into()));
    }
    Ok(())
}

/// Solve `base` (its own `c` is ignored) at every spar and score each fit.
pub fn select_spar(base: &SqrProblem, spar_grid: &[f64], solver: &Solver) -> Result<SelectionReport> {
    check_spar_grid(spar_grid)?;
    let ratio = spar_ratio(base.x(), base.grid(), base.basis())?;
    let outcomes: Vec<(f64, Result<SqrFit>)> = spar_grid
        .par_iter()
        .map(|&spar| {
            let c = ratio * 1000f64.powf(spar - 1.0);
            let result = base.with_c(c).and_then(|p| fit(&p, solver));
            (c, result)
        })
        .collect();

    let n = base.n();
    let mut records = Vec::with_capacity(spar_grid.len());
    let mut fits = Vec::with_capacity(spar_grid.len());
    for (&spar, (c, result)) in spar_grid.iter().zip(outcomes) {
        match result {
            Ok(f) => {
                let crit = information_criteria(&f.fidelity, &f.complexity, n);
                records.push(SparRecord {
                    spar,
                    c,
                    fidelity: f.fidelity.clone(),
                    complexity: f.complexity.clone(),
                    aic: crit.aic,
                    bic: crit.bic,
                    error: None,
                });
                fits.push(Some(f));
            }
            Err(e) => {
                records.push(SparRecord {
                    spar,
                    c,
                    fidelity: Vec::new(),
                    complexity: Vec::new(),
                    aic: f64::NAN,
                    bic: f64::NAN,
                    error: Some(e.to_string()),
                });
                fits.push(None);
            }
        }
    }
    let score = |which: Criterion| -> Vec<Option<f64>> {
        records
            .iter()
            .map(|r| {
                r.error
                    .is_none()
                    .then_some(if which == Criterion::Aic { r.aic } else { r.bic })
            })
            .collect()
    };
    let chosen_aic = choose_index(&score(Criterion::Aic)).ok_or(SqrError::SelectionFailed)?;
    let chosen_bic = choose_index(&score(Criterion::Bic)).ok_or(SqrError::SelectionFailed)?;
    Ok(SelectionReport {
        records,
        chosen_aic,
        chosen_bic,
        fits,
    })
}

/// Shared selection across several problems (e.g. one per frequency):
/// the criterion is averaged over problems before taking the argmin.
/// Only candidates that solved the largest number of problems are eligible.
#[derive(Clone, Debug)]
pub struct SharedSelection {
    pub spars: Vec<f64>,
    /// Mean AIC over problems that solved, per spar.
    pub mean_aic: Vec<f64>,
    /// Mean BIC over problems that solved, per spar.
    pub mean_bic: Vec<f64>,
    pub chosen: usize,
    /// `coefficients[spar][problem]`: `L x p` coefficients, `None` on failure.
    pub coefficients: Vec<Vec<Option<DMatrix<f64>>>>,
}

/// Criteria and coefficients of one (spar, problem) fit; `None` on failure.
type Solved = Option<(Criteria, DMatrix<f64>)>;

/// Means over different subsets of problems are not comparable, so only the
/// candidates that solved the most problems keep a score.
fn shared_scores(means: &[f64], solved: &[usize]) -> Vec<Option<f64>> {
    let most = solved.iter().copied().max().unwrap_or(0);
    means
        .iter()
        .zip(solved)
        .map(|(&m, &k)| (k > 0 && k == most).then_some(m))
        .collect()
}

pub fn select_spar_shared(
    problems: &[SqrProblem],
    spar_grid: &[f64],
    criterion: Criterion,
    solver: &Solver,
) -> Result<SharedSelection> {
    check_spar_grid(spar_grid)?;
    let ratios: Vec<f64> = problems
        .iter()
        .map(|p| spar_ratio(p.x(), p.grid(), p.basis()))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..spar_grid.len())
        .flat_map(|s| (0..problems.len()).map(move |q| (s, q)))
        .collect();
    let results: Vec<Solved> = jobs
        .par_iter()
        .map(|&(s, q)| {
            let c = ratios[q] * 1000f64.powf(spar_grid[s] - 1.0);
            let prob = problems[q].with_c(c).ok()?;
            let f = fit(&prob, solver).ok()?;
            let crit = information_criteria(&f.fidelity, &f.complexity, prob.n());
            Some((crit, f.beta))
        })
        .collect();

    let mut iter = results.into_iter();
    let rows: Vec<Vec<Solved>> = spar_grid
        .iter()
        .map(|_| iter.by_ref().take(problems.len()).collect())
        .collect();
    let mut mean_aic = Vec::with_capacity(spar_grid.len());
    let mut mean_bic = Vec::with_capacity(spar_grid.len());
    let mut coefficients = Vec::with_capacity(spar_grid.len());
    let mut solved = Vec::with_capacity(spar_grid.len());
    for (row, &spar) in rows.into_iter().zip(spar_grid) {
        let ok: Vec<&Criteria> = row.iter().flatten().map(|(c, _)| c).collect();
        let count = ok.len() as f64;
        let (aic, bic) = if ok.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                ok.iter().map(|c| c.aic).sum::<f64>() / count,
                ok.iter().map(|c| c.bic).sum::<f64>() / count,
            )
        };
        if ok.len() < problems.len() {
            log::warn!("spar {spar}: {} of {} problems failed", problems.len() - ok.len(), problems.len());
        }
        solved.push(ok.len());
        mean_aic.push(aic);
        mean_bic.push(bic);
        coefficients.push(row.into_iter().map(|r| r.map(|(_, b)| b)).collect());
    }
    let means = match criterion {
        Criterion::Aic => &mean_aic,
        Criterion::Bic => &mean_bic,
    };
    let chosen = choose_index(&shared_scores(means, &solved)).ok_or(SqrError::SelectionFailed)?;
    Ok(SharedSelection {
        spars: spar_grid.to_vec(),
        mean_aic,
        mean_bic,
        chosen,
        coefficients,
    })
}
