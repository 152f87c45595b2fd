//! The SQR optimisation instance, its piecewise-linear objective and a
//! subgradient.
//!
//! Coefficients are stacked as `theta = [theta_1; ...; theta_p]` with
//! `theta_j` holding the `K` spline coefficients of `beta_j(tau)`. All
//! products with `Phi(tau) = I_p (x) phi(tau)^T` go through the reshaped
//! `p x K` view, so no `n x pK` matrix is ever formed.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::{QuantileGrid, SplineBasis};
use crate::error::{Result, SqrError};
use crate::select;

/// Check loss `rho_tau(r) = r (tau - I(r < 0))`.
#[inline]
pub fn check_loss(tau: f64, r: f64) -> f64 {
    if r < 0.0 {
        r * (tau - 1.0)
    } else {
        r * tau
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A complete SQR instance: data, grid, basis and smoothing parameter.
#[derive(Clone, Debug)]
pub struct SqrProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    grid: QuantileGrid,
    basis: SplineBasis,
    c: f64,
    c_levels: Vec<f64>,
}

impl SqrProblem {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        grid: QuantileGrid,
        basis: SplineBasis,
        c: f64,
    ) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(SqrError::InvalidProblem("empty design matrix".into()));
        }
        if x.nrows() != y.len() {
            return Err(SqrError::Shape(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(SqrError::InvalidProblem("non-finite data".into()));
        }
        if basis.n_levels() != grid.len() {
            return Err(SqrError::Shape(format!(
                "basis evaluated on {} levels, grid has {}",
                basis.n_levels(),
                grid.len()
            )));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(SqrError::InvalidProblem(format!("smoothing parameter {c} must be >= 0")));
        }
        let n = x.nrows() as f64;
        let c_levels = grid.weights().iter().map(|w| n * c * w).collect();
        Ok(Self {
            x,
            y,
            grid,
            basis,
            c,
            c_levels,
        })
    }

    /// Same data, grid and basis with a different smoothing parameter.
    pub fn with_c(&self, c: f64) -> Result<Self> {
        Self::new(
            self.x.clone(),
            self.y.clone(),
            self.grid.clone(),
            self.basis.clone(),
            c,
        )
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Per-level penalty scalars `c_l = n c w_l`.
    pub fn c_levels(&self) -> &[f64] {
        &self.c_levels
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.basis.n_basis()
    }

    pub fn l(&self) -> usize {
        self.grid.len()
    }

    /// Length of the stacked coefficient vector.
    pub fn dim(&self) -> usize {
        self.p() * self.k()
    }

    pub(crate) fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(SqrError::Shape(format!(
                "theta has length {}, expected p*K = {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `beta_j(tau_l)` for every level (row) and coordinate (column).
    pub fn coefficients(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(self.level_map(self.basis.phi(), theta))
    }

    /// Second derivatives `beta_j''(tau_l)`, same layout as [`coefficients`](Self::coefficients).
    pub fn curvature(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(self.level_map(self.basis.phi_dd(), theta))
    }

    fn level_map(&self, basis_values: &DMatrix<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        let (l, p, k) = (self.l(), self.p(), self.k());
        let width = self.basis.support_width();
        let mut out = DMatrix::zeros(l, p);
        for lev in 0..l {
            let first = self.basis.first_nonzero(lev);
            for j in 0..p {
                let mut acc = 0.0;
                for kk in first..first + width {
                    acc += basis_values[(lev, kk)] * theta[j * k + kk];
                }
                out[(lev, j)] = acc;
            }
        }
        out
    }

    /// Residuals `y_t - x_t' beta(tau_l)`, one row per level.
    pub fn residuals(&self, beta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut res = DMatrix::zeros(self.l(), self.n());
        for lev in 0..self.l() {
            let b = beta.row(lev).transpose();
            let fitted = &self.x * b;
            for t in 0..self.n() {
                res[(lev, t)] = self.y[t] - fitted[t];
            }
        }
        res
    }

    /// Fidelity, penalty and unweighted roughness at `theta`.
    pub fn objective_parts(&self, theta: &DVector<f64>) -> Result<ObjectiveParts> {
        let beta = self.coefficients(theta)?;
        let curv = self.curvature(theta)?;
        let res = self.residuals(&beta);
        let mut fidelity = 0.0;
        let mut penalty = 0.0;
        let mut roughness = 0.0;
        for (lev, &tau) in self.grid.levels().iter().enumerate() {
            fidelity += res.row(lev).iter().map(|&r| check_loss(tau, r)).sum::<f64>();
            let l1: f64 = curv.row(lev).iter().map(|v| v.abs()).sum();
            penalty += self.c_levels[lev] * l1;
            roughness += self.grid.weights()[lev] * l1;
        }
        Ok(ObjectiveParts {
            fidelity,
            penalty,
            roughness,
        })
    }
}

/// Decomposition of the SQR objective at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObjectiveParts {
    /// `sum_l sum_t rho_{tau_l}(residual)`
    pub fidelity: f64,
    /// `sum_l c_l ||beta''(tau_l)||_1`
    pub penalty: f64,
    /// `sum_l w_l ||beta''(tau_l)||_1`, the penalty without the `n c` factor.
    pub roughness: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.fidelity + self.penalty
    }
}

/// SQR objective at `theta`.
pub fn objective(prob: &SqrProblem, theta: &DVector<f64>) -> Result<f64> {
    Ok(prob.objective_parts(theta)?.total())
}

/// Subgradient of the SQR objective with zero derivative taken at kinks.
pub fn subgradient(prob: &SqrProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let beta = prob.coefficients(theta)?;
    let curv = prob.curvature(theta)?;
    let (n, p, k) = (prob.n(), prob.p(), prob.k());
    let width = prob.basis().support_width();
    let phi = prob.basis().phi();
    let phi_dd = prob.basis().phi_dd();
    let x = prob.x();
    let y = prob.y();
    let mut g = DVector::zeros(p * k);
    let mut xt_psi = vec![0.0; p];
    for (lev, &tau) in prob.grid().levels().iter().enumerate() {
        xt_psi.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..n {
            let mut fit = 0.0;
            for j in 0..p {
                fit += x[(t, j)] * beta[(lev, j)];
            }
            let r = y[t] - fit;
            let psi = if r > 0.0 {
                tau
            } else if r < 0.0 {
                tau - 1.0
            } else {
                0.0
            };
            if psi != 0.0 {
                for j in 0..p {
                    xt_psi[j] += x[(t, j)] * psi;
                }
            }
        }
        let first = prob.basis().first_nonzero(lev);
        let cl = prob.c_levels()[lev];
        for j in 0..p {
            let s = sign(curv[(lev, j)]);
            for kk in first..first + width {
                g[j * k + kk] += -phi[(lev, kk)] * xt_psi[j] + cl * phi_dd[(lev, kk)] * s;
            }
        }
    }
    Ok(g)
}

/// Which algorithm produced a fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    InteriorPoint,
    Bfgs,
    Adam,
    Grad,
}

/// Solver diagnostics attached to a fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverInfo {
    pub method: SolverMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Duality gap for the interior-point method.
    pub gap: Option<f64>,
    /// Final step size for the gradient methods.
    pub final_step: Option<f64>,
}

/// Result of an SQR solve.
#[derive(Clone, Debug)]
pub struct SqrFit {
    pub theta: DVector<f64>,
    /// `L x p` functional coefficients on the grid.
    pub beta: DMatrix<f64>,
    /// `L x n` residuals.
    pub residuals: DMatrix<f64>,
    pub objective_value: f64,
    pub parts: ObjectiveParts,
    pub info: SolverInfo,
    /// Mean check loss per level.
    pub fidelity: Vec<f64>,
    /// Number of closely fitted points per level.
    pub complexity: Vec<usize>,
}

impl SqrFit {
    pub fn new(prob: &SqrProblem, theta: DVector<f64>, info: SolverInfo) -> Result<Self> {
        let beta = prob.coefficients(&theta)?;
        let residuals = prob.residuals(&beta);
        let parts = prob.objective_parts(&theta)?;
        let threshold = select::default_threshold(prob.y());
        let (fidelity, complexity) = select::fidelity_complexity_from_residuals(
            prob.grid().levels(),
            &residuals,
            threshold,
        );
        Ok(Self {
            theta,
            beta,
            residuals,
            objective_value: parts.total(),
            parts,
            info,
            fidelity,
            complexity,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_problem(c: f64) -> SqrProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |t, _| 0.5 + 2.0 * x[(t, 1)] + rng.gen_range(-1.0..1.0));
        let grid = QuantileGrid::from_range(0.1, 0.9, 0.1).unwrap();
        let basis = build_basis(&grid, Some(4)).unwrap();
        SqrProblem::new(x, y, grid, basis, c).unwrap()
    }

    #[test]
    fn check_loss_values() {
        assert_eq!(check_loss(0.5, 2.0), 1.0);
        assert_eq!(check_loss(0.25, -4.0), 3.0);
        assert_eq!(check_loss(0.9, 0.0), 0.0);
    }

    #[test]
    fn c_levels_scale_with_n() {
        let p = toy_problem(0.3);
        for (cl, w) in p.c_levels().iter().zip(p.grid().weights()) {
            assert_eq!(*cl, 30.0 * 0.3 * w);
        }
    }

    #[test]
    fn zero_theta_gives_sum_of_check_losses() {
        let p = toy_problem(1.0);
        let theta = DVector::zeros(p.dim());
        let expected: f64 = p
            .grid()
            .levels()
            .iter()
            .map(|&tau| p.y().iter().map(|&v| check_loss(tau, v)).sum::<f64>())
            .sum();
        assert!((objective(&p, &theta).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn penalty_matches_elementwise_recomputation() {
        let p = toy_problem(0.7);
        let theta = DVector::from_fn(p.dim(), |i, _| (i as f64 * 0.37).sin());
        let parts = p.objective_parts(&theta).unwrap();
        let k = p.k();
        let mut expected = 0.0;
        for lev in 0..p.l() {
            for j in 0..p.p() {
                let mut dd = 0.0;
                for kk in 0..k {
                    dd += p.basis().phi_dd()[(lev, kk)] * theta[j * k + kk];
                }
                expected += p.c_levels()[lev] * dd.abs();
            }
        }
        assert!((parts.penalty - expected).abs() <= 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn subgradient_with_positive_residuals() {
        let mut p = toy_problem(0.0);
        p.y = p.y.map(|v| v + 1e3);
        let theta = DVector::zeros(p.dim());
        let g = subgradient(&p, &theta).unwrap();
        let k = p.k();
        let mut expected = DVector::zeros(p.dim());
        for (lev, &tau) in p.grid().levels().iter().enumerate() {
            let col_sums: Vec<f64> = (0..p.p()).map(|j| p.x().column(j).sum()).collect();
            for j in 0..p.p() {
                for kk in 0..k {
                    expected[j * k + kk] -= tau * p.basis().phi()[(lev, kk)] * col_sums[j];
                }
            }
        }
        assert!((g - expected).amax() < 1e-10);
    }

    #[test]
    fn shape_errors() {
        let p = toy_problem(0.0);
        let bad = DVector::zeros(p.dim() + 1);
        assert!(matches!(objective(&p, &bad), Err(SqrError::Shape(_))));
        assert!(matches!(subgradient(&p, &bad), Err(SqrError::Shape(_))));
    }
}
