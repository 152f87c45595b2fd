//! Solver dispatch and independent per-level quantile regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{QuantileGrid, SplineBasis};
use crate::error::{Result, SqrError};
use crate::grad::{self, GradConfig};
use crate::ip::{self, IpConfig, IpStatus};
use crate::lp::CanonicalLp;
use crate::objective::{SolverInfo, SolverMethod, SqrFit, SqrProblem};

/// Which algorithm to use for an SQR solve.
#[derive(Clone, Debug, PartialEq)]
pub enum Solver {
    InteriorPoint(IpConfig),
    Gradient(GradConfig),
}

impl Default for Solver {
    fn default() -> Self {
        Solver::InteriorPoint(IpConfig::default())
    }
}

/// Solve `prob` and package the result.
pub fn fit(prob: &SqrProblem, solver: &Solver) -> Result<SqrFit> {
    match solver {
        Solver::InteriorPoint(cfg) => {
            let lp = CanonicalLp::assemble(prob)?;
            let sol = ip::solve_ip(&lp, cfg)?;
            if sol.status == IpStatus::MaxIterExceeded {
                return Err(SqrError::MaxIterExceeded {
                    iterations: sol.iterations,
                    gap: sol.gap,
                });
            }
            let theta = lp.recover_theta(&sol)?;
            SqrFit::new(
                prob,
                theta,
                SolverInfo {
                    method: SolverMethod::InteriorPoint,
                    iterations: sol.iterations,
                    converged: true,
                    gap: Some(sol.gap),
                    final_step: None,
                },
            )
        }
        Solver::Gradient(cfg) => {
            let theta0 = qr_warm_start(prob, &IpConfig::default())?;
            let (theta, trace) = grad::solve(prob, theta0, cfg)?;
            SqrFit::new(
                prob,
                theta,
                SolverInfo {
                    method: cfg.algorithm.method(),
                    iterations: trace.iterations(),
                    converged: trace.outcome.is_converged(),
                    gap: None,
                    final_step: trace.steps.last().copied(),
                },
            )
        }
    }
}

/// Ordinary quantile regression at one level.
pub fn quantile_regression(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    cfg: &IpConfig,
) -> Result<DVector<f64>> {
    let grid = QuantileGrid::single(tau)?;
    let basis = SplineBasis::constant(&grid);
    let prob = SqrProblem::new(x.clone(), y.clone(), grid, basis, 0.0)?;
    let lp = CanonicalLp::assemble(&prob)?;
    let sol = ip::solve_ip(&lp, cfg)?;
    if sol.status == IpStatus::MaxIterExceeded {
        return Err(SqrError::MaxIterExceeded {
            iterations: sol.iterations,
            gap: sol.gap,
        });
    }
    lp.recover_theta(&sol)
}

/// Independent QR at every level of `grid`: an `L x p` coefficient matrix.
pub fn independent_qr(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &QuantileGrid,
    cfg: &IpConfig,
) -> Result<DMatrix<f64>> {
    let rows: Vec<DVector<f64>> = grid
        .levels()
        .par_iter()
        .map(|&tau| quantile_regression(x, y, tau, cfg))
        .collect::<Result<_>>()?;
    let mut beta = DMatrix::zeros(grid.len(), x.ncols());
    for (lev, row) in rows.iter().enumerate() {
        beta.row_mut(lev).copy_from(&row.transpose());
    }
    Ok(beta)
}

/// Least-squares projection of per-level coefficients onto the spline basis:
/// `theta_j = argmin ||Phi theta_j - beta[:, j]||_2`.
pub fn project_onto_basis(basis: &SplineBasis, beta: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = basis.n_basis();
    let p = beta.ncols();
    let svd = basis.phi().clone().svd(true, true);
    let mut theta = DVector::zeros(p * k);
    for j in 0..p {
        let col = beta.column(j).into_owned();
        let sol = svd
            .solve(&col, 1e-12)
            .map_err(|e| SqrError::InvalidProblem(format!("basis projection failed: {e}")))?;
        theta.rows_mut(j * k, k).copy_from(&sol);
    }
    Ok(theta)
}

/// Starting point for the gradient solvers: independent QR estimates
/// projected onto the spline basis.
pub fn qr_warm_start(prob: &SqrProblem, cfg: &IpConfig) -> Result<DVector<f64>> {
    let beta = independent_qr(prob.x(), prob.y(), prob.grid(), cfg)?;
    project_onto_basis(prob.basis(), &beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;

    #[test]
    fn projection_reproduces_spline_coefficients() {
        let grid = QuantileGrid::from_range(0.1, 0.9, 0.05).unwrap();
        let basis = build_basis(&grid, None).unwrap();
        let k = basis.n_basis();
        let theta = DVector::from_fn(2 * k, |i, _| (i as f64).cos());
        let mut beta = DMatrix::zeros(grid.len(), 2);
        for j in 0..2 {
            let col = basis.phi() * theta.rows(j * k, k);
            beta.column_mut(j).copy_from(&col);
        }
        let back = project_onto_basis(&basis, &beta).unwrap();
        assert!((back - theta).amax() < 1e-9);
    }

    #[test]
    fn qr_slope_on_exact_line() {
        let x = DMatrix::from_fn(9, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(9, |i, _| 2.0 + 0.5 * i as f64);
        let b = quantile_regression(&x, &y, 0.5, &IpConfig::default()).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-6 && (b[1] - 0.5).abs() < 1e-6, "{b}");
    }
}
