//! The canonical primal-dual LP pair of an SQR problem.
//!
//! The constraint matrix `D` stacks `X Phi(tau_l)` for every level followed by
//! `2 c_l Phi''(tau_l)`. It is never materialised: every product goes through
//! the per-level Kronecker factors, and [`CanonicalLp::dense`] exists only for
//! cross-checking and CSV dumps.
//!
//! Dual:   max b'zeta  s.t. D'zeta = a, zeta in [0, 1]^(nL + pL)
//! Primal: min a'theta + 1'z  s.t. D theta + z - w = b, z, w >= 0

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DMatrixView, DMatrixViewMut, DVector, Dyn};

use crate::error::{Result, SqrError};
use crate::ip::{IpSolution, IpStatus};
use crate::objective::SqrProblem;

/// `(n, p, K, L)` of an assembled LP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LpDims {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub l: usize,
}

impl LpDims {
    /// Length of `b` and `zeta`: `nL + pL`.
    pub fn rows(&self) -> usize {
        self.n * self.l + self.p * self.l
    }

    /// Length of `theta` and `a`: `pK`.
    pub fn cols(&self) -> usize {
        self.p * self.k
    }

    /// Decision variables of the inequality-form LP: `2pK + 2nL + 2pL`.
    pub fn decision_variables(&self) -> usize {
        2 * self.cols() + 2 * self.rows()
    }
}

/// Block-structured `(D, a, b)` triple for one SQR problem.
#[derive(Clone, Debug)]
pub struct CanonicalLp<'a> {
    prob: &'a SqrProblem,
    dims: LpDims,
    a: DVector<f64>,
    b: DVector<f64>,
    offset: f64,
    /// `n x p(p+1)/2` columns `x_j * x_jj` (j <= jj) for the per-level Gram blocks.
    pairs: DMatrix<f64>,
    rot: Rotation,
}

/// Orthogonal change of spline coordinates, applied to every coefficient,
/// that separates the null space of the curvature operator.
///
/// A heavy penalty makes the normal matrix huge along curved directions and
/// data-sized along the rest. In B-spline coordinates the two scales share
/// every entry and the data-sized part is lost to rounding; after rotation
/// the null directions get exactly zero penalty contribution.
#[derive(Clone, Debug)]
struct Rotation {
    /// `K x K`; column `u` is the `u`-th right singular vector of `Phi''`.
    v: DMatrix<f64>,
    /// `Phi V`.
    phi: DMatrix<f64>,
    /// `Phi'' V` with the null columns set to zero.
    phi_dd: DMatrix<f64>,
}

/// Singular values below this fraction of the largest count as zero.
const NULL_TOL: f64 = 1e-10;

impl Rotation {
    fn new(phi: &DMatrix<f64>, phi_dd: &DMatrix<f64>) -> Self {
        let (l, k) = phi_dd.shape();
        // Pad to at least K rows so the SVD returns a full K x K factor.
        let mut padded = DMatrix::zeros(l.max(k), k);
        padded.rows_mut(0, l).copy_from(phi_dd);
        let svd = padded.svd(false, true);
        let v = svd.v_t.expect("requested").transpose();
        let top = svd.singular_values.max();
        let mut rotated_dd = phi_dd * &v;
        for (u, &sigma) in svd.singular_values.iter().enumerate() {
            if sigma <= NULL_TOL * top {
                rotated_dd.column_mut(u).fill(0.0);
            }
        }
        Self {
            phi: phi * &v,
            phi_dd: rotated_dd,
            v,
        }
    }
}

/// Cholesky factor of `D' diag(weights) D` held in rotated coordinates.
#[derive(Clone, Debug)]
pub struct NormalFactor {
    chol: Cholesky<f64, Dyn>,
    v: DMatrix<f64>,
    p: usize,
}

impl NormalFactor {
    /// Solve `D' diag(weights) D x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let k = self.v.nrows();
        let mut rotated = DVector::zeros(rhs.len());
        for j in 0..self.p {
            rotated.rows_mut(j * k, k).gemv_tr(1.0, &self.v, &rhs.rows(j * k, k), 0.0);
        }
        let eta = self.chol.solve(&rotated);
        let mut out = DVector::zeros(rhs.len());
        for j in 0..self.p {
            out.rows_mut(j * k, k).gemv(1.0, &self.v, &eta.rows(j * k, k), 0.0);
        }
        out
    }
}

/// Column of `(j, jj)`, `j <= jj`, in the packed pair layout.
fn pair_index(p: usize, j: usize, jj: usize) -> usize {
    j * p - j * (j + 1) / 2 + jj
}

impl<'a> CanonicalLp<'a> {
    pub fn assemble(prob: &'a SqrProblem) -> Result<Self> {
        let dims = LpDims {
            n: prob.n(),
            p: prob.p(),
            k: prob.k(),
            l: prob.l(),
        };
        if dims.n == 0 || dims.p == 0 || dims.l == 0 || dims.k == 0 {
            return Err(SqrError::InvalidProblem("empty design or grid".into()));
        }
        let mut b = DVector::zeros(dims.rows());
        for lev in 0..dims.l {
            b.rows_mut(lev * dims.n, dims.n).copy_from(prob.y());
        }
        let y_sum: f64 = prob.y().sum();
        let offset = prob
            .grid()
            .levels()
            .iter()
            .map(|tau| (1.0 - tau) * y_sum)
            .sum();
        let x = prob.x();
        let mut pairs = DMatrix::zeros(dims.n, dims.p * (dims.p + 1) / 2);
        for j in 0..dims.p {
            for jj in j..dims.p {
                pairs
                    .column_mut(pair_index(dims.p, j, jj))
                    .copy_from(&x.column(j).component_mul(&x.column(jj)));
            }
        }
        let rot = Rotation::new(prob.basis().phi(), prob.basis().phi_dd());
        let mut lp = Self {
            prob,
            dims,
            a: DVector::zeros(dims.cols()),
            b,
            offset,
            pairs,
            rot,
        };
        lp.a = lp.apply_transpose(&lp.feasible_zeta());
        Ok(lp)
    }

    pub fn problem(&self) -> &SqrProblem {
        self.prob
    }

    pub fn dims(&self) -> LpDims {
        self.dims
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Constant dropped when passing from the SQR objective to the LP pair:
    /// `SQR objective = a'theta + ||z||_1 - offset = b'zeta - offset` at optimum.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `[(1 - tau_1) 1_n; ...; (1 - tau_L) 1_n; 0.5 1_pL]`, which satisfies `D'zeta = a`.
    fn feasible_zeta(&self) -> DVector<f64> {
        let LpDims { n, p, l, .. } = self.dims;
        let mut z = DVector::from_element(self.dims.rows(), 0.5);
        for (lev, tau) in self.prob.grid().levels().iter().enumerate() {
            z.rows_mut(lev * n, n).fill(1.0 - tau);
        }
        debug_assert_eq!(z.len(), n * l + p * l);
        z
    }

    /// Interior-point starting dual, clamped into `(small, 1 - small)`.
    pub fn initial_zeta(&self, small: f64) -> DVector<f64> {
        self.feasible_zeta().map(|v| v.clamp(small, 1.0 - small))
    }

    /// `D theta`.
    pub fn apply(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dims.rows());
        self.apply_into(theta, &mut out)?;
        Ok(out)
    }

    /// `D theta` written into `out`, which must have `rows()` entries.
    pub fn apply_into(&self, theta: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        assert_eq!(out.len(), self.dims.rows(), "output length");
        let LpDims { n, p, l, .. } = self.dims;
        let beta = self.prob.coefficients(theta)?;
        let curv = self.prob.curvature(theta)?;
        // Column-major n x L: column l holds X beta(tau_l).
        let mut fitted = DMatrixViewMut::from_slice(&mut out.as_mut_slice()[..n * l], n, l);
        fitted.gemm(1.0, self.prob.x(), &beta.transpose(), 0.0);
        for lev in 0..l {
            let scale = 2.0 * self.prob.c_levels()[lev];
            for j in 0..p {
                out[n * l + lev * p + j] = scale * curv[(lev, j)];
            }
        }
        Ok(())
    }

    /// `D' zeta`.
    pub fn apply_transpose(&self, zeta: &DVector<f64>) -> DVector<f64> {
        assert_eq!(zeta.len(), self.dims.rows(), "zeta length");
        let LpDims { n, p, k, l } = self.dims;
        let basis = self.prob.basis();
        let width = basis.support_width();
        let z = DMatrixView::from_slice(&zeta.as_slice()[..n * l], n, l);
        let xz = self.prob.x().tr_mul(&z);
        let mut out = DVector::zeros(self.dims.cols());
        for lev in 0..l {
            let first = basis.first_nonzero(lev);
            let scale = 2.0 * self.prob.c_levels()[lev];
            for j in 0..p {
                let pen = scale * zeta[n * l + lev * p + j];
                let xzj = xz[(j, lev)];
                for kk in first..first + width {
                    out[j * k + kk] += basis.phi()[(lev, kk)] * xzj + basis.phi_dd()[(lev, kk)] * pen;
                }
            }
        }
        out
    }

    /// `D' diag(weights) D`, the `pK x pK` normal matrix.
    pub fn normal_matrix(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(weights.len(), self.dims.rows(), "weights length");
        let LpDims { n, p, k, l } = self.dims;
        let basis = self.prob.basis();
        let width = basis.support_width();
        let w = DMatrixView::from_slice(&weights.as_slice()[..n * l], n, l);
        // Row (j, jj), column l: sum_t w_lt x_tj x_tjj.
        let gram = self.pairs.tr_mul(&w);
        let mut out = DMatrix::zeros(p * k, p * k);
        for lev in 0..l {
            let first = basis.first_nonzero(lev);
            let c2 = 4.0 * self.prob.c_levels()[lev] * self.prob.c_levels()[lev];
            for j in 0..p {
                for jj in j..p {
                    let mjj = gram[(pair_index(p, j, jj), lev)];
                    for u in 0..width {
                        let fu = basis.phi()[(lev, first + u)] * mjj;
                        for v in 0..width {
                            out[(j * k + first + u, jj * k + first + v)] +=
                                fu * basis.phi()[(lev, first + v)];
                        }
                    }
                }
                let q = weights[n * l + lev * p + j] * c2;
                if q != 0.0 {
                    for u in 0..width {
                        let du = basis.phi_dd()[(lev, first + u)] * q;
                        for v in 0..width {
                            out[(j * k + first + u, j * k + first + v)] +=
                                du * basis.phi_dd()[(lev, first + v)];
                        }
                    }
                }
            }
        }
        // Only blocks with j <= jj were filled; mirror the strict upper part.
        for j in 0..p {
            for jj in (j + 1)..p {
                for u in 0..k {
                    for v in 0..k {
                        out[(jj * k + v, j * k + u)] = out[(j * k + u, jj * k + v)];
                    }
                }
            }
        }
        out
    }

    /// Factor `D' diag(weights) D`, assembled in rotated spline coordinates.
    pub fn factor_normal(&self, weights: &DVector<f64>) -> Result<NormalFactor> {
        assert_eq!(weights.len(), self.dims.rows(), "weights length");
        let LpDims { n, p, k, l } = self.dims;
        let w = DMatrixView::from_slice(&weights.as_slice()[..n * l], n, l);
        let gram = self.pairs.tr_mul(&w);
        let c2 = DVector::from_fn(l, |lev, _| 4.0 * self.prob.c_levels()[lev].powi(2));
        let mut out = DMatrix::zeros(p * k, p * k);
        let mut scaled = DMatrix::zeros(l, k);
        for j in 0..p {
            for jj in j..p {
                let g = gram.row(pair_index(p, j, jj)).transpose();
                for (lev, mut row) in scaled.row_iter_mut().enumerate() {
                    row.copy_from(&(self.rot.phi.row(lev) * g[lev]));
                }
                let mut block = out.view_mut((j * k, jj * k), (k, k));
                block.gemm_tr(1.0, &scaled, &self.rot.phi, 0.0);
            }
            for (lev, mut row) in scaled.row_iter_mut().enumerate() {
                row.copy_from(&(self.rot.phi_dd.row(lev) * (weights[n * l + lev * p + j] * c2[lev])));
            }
            let mut block = out.view_mut((j * k, j * k), (k, k));
            block.gemm_tr(1.0, &scaled, &self.rot.phi_dd, 1.0);
        }
        for j in 0..p {
            for jj in (j + 1)..p {
                let upper = out.view((j * k, jj * k), (k, k)).transpose();
                out.view_mut((jj * k, j * k), (k, k)).copy_from(&upper);
            }
        }
        let chol = Cholesky::new(out).ok_or(SqrError::SingularNormalEquations)?;
        Ok(NormalFactor {
            chol,
            v: self.rot.v.clone(),
            p,
        })
    }

    /// Dense `D`. Test and debugging use only.
    pub fn dense(&self) -> DMatrix<f64> {
        let LpDims { n, p, k, l } = self.dims;
        let basis = self.prob.basis();
        let x = self.prob.x();
        let mut d = DMatrix::zeros(self.dims.rows(), self.dims.cols());
        for lev in 0..l {
            for t in 0..n {
                for j in 0..p {
                    for kk in 0..k {
                        d[(lev * n + t, j * k + kk)] = x[(t, j)] * basis.phi()[(lev, kk)];
                    }
                }
            }
            let scale = 2.0 * self.prob.c_levels()[lev];
            for j in 0..p {
                for kk in 0..k {
                    d[(n * l + lev * p + j, j * k + kk)] = scale * basis.phi_dd()[(lev, kk)];
                }
            }
        }
        d
    }

    /// `a'theta + ||(b - D theta)_+||_1`, the primal objective with the
    /// minimal slack split.
    pub fn primal_value(&self, theta: &DVector<f64>) -> Result<f64> {
        self.primal_value_with(theta, &mut DVector::zeros(self.dims.rows()))
    }

    /// [`primal_value`](Self::primal_value) with caller-owned workspace of `rows()` entries.
    pub fn primal_value_with(&self, theta: &DVector<f64>, work: &mut DVector<f64>) -> Result<f64> {
        self.apply_into(theta, work)?;
        let slack: f64 = self
            .b
            .iter()
            .zip(work.iter())
            .map(|(b, d)| (b - d).max(0.0))
            .sum();
        Ok(self.a.dot(theta) + slack)
    }

    /// `b'zeta`.
    pub fn dual_value(&self, zeta: &DVector<f64>) -> f64 {
        self.b.dot(zeta)
    }

    /// Minimal nonnegative split `(z, w)` with `D theta + z - w = b`.
    pub fn split_residual(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let r = &self.b - self.apply(theta)?;
        Ok((r.map(|v| v.max(0.0)), r.map(|v| (-v).max(0.0))))
    }

    /// Free primal variable from an interior-point solution.
    pub fn recover_theta(&self, sol: &IpSolution) -> Result<DVector<f64>> {
        if sol.status != IpStatus::Converged {
            return Err(SqrError::NotConverged(format!(
                "interior point stopped after {} iterations with gap {:e}",
                sol.iterations, sol.gap
            )));
        }
        self.prob.check_theta(&sol.theta)?;
        Ok(sol.theta.clone())
    }

    /// Write `D.csv` (dense, one column per theta entry), `a.csv` and `b.csv`
    /// into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let d = self.dense();
        let mut out = BufWriter::new(File::create(dir.join("D.csv"))?);
        let header: Vec<String> = (0..d.ncols()).map(|c| format!("col{c}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for r in 0..d.nrows() {
            let row: Vec<String> = d.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        for (name, v) in [("a.csv", &self.a), ("b.csv", &self.b)] {
            let mut out = BufWriter::new(File::create(dir.join(name))?);
            writeln!(out, "index,value")?;
            for (i, x) in v.iter().enumerate() {
                writeln!(out, "{i},{x}")?;
            }
            out.flush()?;
        }
        Ok(())
    }
}
