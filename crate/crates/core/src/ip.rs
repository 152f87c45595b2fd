//! Frisch-Newton primal-dual interior-point solver for the canonical SQR pair.
//!
//! This is the bounded-variable LP iteration used for ordinary quantile
//! regression (`min c'x s.t. Ax = rhs, 0 <= x <= 1`) with `A = D'`,
//! `c = -b`, `rhs = a` and the dual start `zeta_0` taken from the LP.
//! Each iteration takes an affine-scaling step and, whenever that step is
//! blocked by the boundary, a Mehrotra centering-corrector step reusing the
//! same Cholesky factor.

use log::debug;
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Result, SqrError};
use crate::lp::CanonicalLp;

/// Tuning knobs of the interior-point iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IpConfig {
    pub max_iter: usize,
    /// Relative duality-gap tolerance, scaled by `1 + |a'theta|`.
    pub gap_tol: f64,
    /// Minimum distance kept between `zeta` and the box boundary.
    pub small: f64,
    /// Fraction of the maximal step taken toward the boundary.
    pub step_factor: f64,
}

impl Default for IpConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            gap_tol: 1e-7,
            small: 1e-10,
            step_factor: 0.99995,
        }
    }
}

impl IpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.gap_tol > 0.0) || !(self.small > 0.0) {
            return Err(SqrError::Config(format!("invalid interior-point config {self:?}")));
        }
        if !(self.step_factor > 0.0 && self.step_factor < 1.0) {
            return Err(SqrError::Config("step_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Iterate of the primal-dual pair, expressed in the LP's own variables:
/// `D theta + z - w = b` and `zeta` in the open unit box.
#[derive(Clone, Debug)]
pub struct IpState {
    pub zeta: DVector<f64>,
    pub theta: DVector<f64>,
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub iteration: usize,
    pub gap: f64,
}

impl IpState {
    /// State built from a primal point using the minimal slack split.
    pub fn from_primal(
        lp: &CanonicalLp<'_>,
        theta: DVector<f64>,
        zeta: DVector<f64>,
    ) -> Result<Self> {
        let (z, w) = lp.split_residual(&theta)?;
        let gap = lp.primal_value(&theta)? - lp.dual_value(&zeta);
        Ok(Self {
            zeta,
            theta,
            z,
            w,
            iteration: 0,
            gap,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IpStatus {
    Converged,
    MaxIterExceeded,
}

/// Residuals measuring distance from optimality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KktReport {
    /// `||D'zeta - a||_inf` plus any violation of the unit box.
    pub primal_infeasibility: f64,
    /// `||D theta + z - w - b||_inf` plus any negativity of `z`, `w`.
    pub dual_infeasibility: f64,
    /// `sum_i zeta_i w_i + (1 - zeta_i) z_i`.
    pub complementarity: f64,
    /// `|a'theta + 1'z - b'zeta|`.
    pub gap: f64,
}

/// Output of [`solve_ip`]. A run that hits `max_iter` still returns its last
/// iterate with `status == MaxIterExceeded`.
#[derive(Clone, Debug)]
pub struct IpSolution {
    pub theta: DVector<f64>,
    pub zeta: DVector<f64>,
    pub state: IpState,
    pub status: IpStatus,
    pub iterations: usize,
    /// Final duality gap `(a'theta + ||(b - D theta)_+||_1) - b'zeta`.
    pub gap: f64,
    /// Complementarity `x'z + s'w` after each iteration, starting with the initial point.
    pub history: Vec<f64>,
    /// KKT residuals at the starting point.
    pub initial_kkt: KktReport,
}

impl IpSolution {
    pub fn converged(&self) -> bool {
        self.status == IpStatus::Converged
    }
}

pub fn kkt_report(lp: &CanonicalLp<'_>, state: &IpState) -> KktReport {
    let box_violation = state
        .zeta
        .iter()
        .map(|&v| (-v).max(v - 1.0).max(0.0))
        .fold(0.0, f64::max);
    let primal = (lp.apply_transpose(&state.zeta) - lp.a()).amax() + box_violation;
    let dual = match lp.apply(&state.theta) {
        Ok(dt) => {
            let neg = state
                .z
                .iter()
                .chain(state.w.iter())
                .map(|v| (-v).max(0.0))
                .fold(0.0, f64::max);
            (dt + &state.z - &state.w - lp.b()).amax() + neg
        }
        Err(_) => f64::INFINITY,
    };
    let complementarity = state
        .zeta
        .iter()
        .zip(state.z.iter().zip(state.w.iter()))
        .map(|(&zeta, (&z, &w))| zeta * w + (1.0 - zeta) * z)
        .sum();
    let gap = (lp.a().dot(&state.theta) + state.z.sum() - lp.dual_value(&state.zeta)).abs();
    KktReport {
        primal_infeasibility: primal,
        dual_infeasibility: dual,
        complementarity,
        gap,
    }
}

const SLACK_FLOOR: f64 = 1e-6;

// Largest step keeping `v + step * dv >= floor`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>, floor: f64, current: f64) -> f64 {
    let mut step = current;
    for (&vi, &di) in v.as_slice().iter().zip(dv.as_slice()) {
        // Divide only when this entry binds: (vi - floor) / -di < step.
        if di < 0.0 && (vi - floor).max(0.0) < step * -di {
            step = (vi - floor).max(0.0) / -di;
        }
    }
    step
}

// Affine-scaling direction given `u = D dy`; `ix`, `is` are `1/x`, `1/s`.
fn affine_direction(
    d: &DVector<f64>,
    u: &DVector<f64>,
    zw: &DVector<f64>,
    [ix, is, zf, wf]: [&DVector<f64>; 4],
    [dx, ds, dz, dw]: [&mut DVector<f64>; 4],
) {
    let n = d.len();
    let (d, u, zw) = (&d.as_slice()[..n], &u.as_slice()[..n], &zw.as_slice()[..n]);
    let (ix, is, zf, wf) = (&ix.as_slice()[..n], &is.as_slice()[..n], &zf.as_slice()[..n], &wf.as_slice()[..n]);
    let (dx, ds) = (&mut dx.as_mut_slice()[..n], &mut ds.as_mut_slice()[..n]);
    let (dz, dw) = (&mut dz.as_mut_slice()[..n], &mut dw.as_mut_slice()[..n]);
    for i in 0..n {
        dx[i] = d[i] * (u[i] - zw[i]);
        ds[i] = -dx[i];
        dz[i] = -zf[i] * (dx[i] * ix[i] + 1.0);
        dw[i] = -wf[i] * (ds[i] * is[i] + 1.0);
    }
}

// Damped primal and dual step lengths, capped at one.
fn step_lengths(beta: f64, [x, s, zf, wf]: [&DVector<f64>; 4], [dx, ds, dz, dw]: [&DVector<f64>; 4]) -> (f64, f64) {
    let primal = max_step(s, ds, 0.0, max_step(x, dx, 0.0, f64::INFINITY));
    let dual = max_step(wf, dw, 0.0, max_step(zf, dz, 0.0, f64::INFINITY));
    ((beta * primal).min(1.0), (beta * dual).min(1.0))
}

/// Solve the SQR LP pair by the primal-dual interior-point method.
pub fn solve_ip(lp: &CanonicalLp<'_>, cfg: &IpConfig) -> Result<IpSolution> {
    cfg.validate()?;
    let rows = lp.dims().rows();
    let beta = cfg.step_factor;
    let b = lp.b();
    let a = lp.a();

    // x = zeta, s = 1 - zeta; y = -theta; zf pairs with x, wf with s.
    let mut x = lp.initial_zeta(cfg.small);
    let mut s = x.map(|v| 1.0 - v);
    let ones = DVector::from_element(rows, 1.0);
    let init = lp.factor_normal(&ones)?;
    let mut y = init.solve(&lp.apply_transpose(&(-b)));
    let r = -b - lp.apply(&y)?;
    let mut zf = r.map(|v| if v.abs() < SLACK_FLOOR { v.max(0.0) + SLACK_FLOOR } else { v.max(0.0) });
    let mut wf = r.map(|v| if v.abs() < SLACK_FLOOR { (-v).max(0.0) + SLACK_FLOOR } else { (-v).max(0.0) });

    let complementarity = |x: &DVector<f64>, s: &DVector<f64>, zf: &DVector<f64>, wf: &DVector<f64>| {
        x.dot(zf) + s.dot(wf)
    };
    let make_state = |x: &DVector<f64>, y: &DVector<f64>, zf: &DVector<f64>, wf: &DVector<f64>, it: usize, gap: f64| IpState {
        zeta: x.clone(),
        theta: -y,
        z: wf.clone(),
        w: zf.clone(),
        iteration: it,
        gap,
    };

    let initial_gap = lp.primal_value(&(-&y))? - lp.dual_value(&x);
    let initial_kkt = kkt_report(lp, &make_state(&x, &y, &zf, &wf, 0, initial_gap));
    let mut history = vec![complementarity(&x, &s, &zf, &wf)];

    // Workspace reused across iterations; each vector has one entry per LP row.
    let buf = || DVector::<f64>::zeros(rows);
    let (mut d, mut zw, mut dzw, mut u) = (buf(), buf(), buf(), buf());
    let (mut dx, mut ds, mut dz, mut dw) = (buf(), buf(), buf(), buf());
    let (mut dxdz, mut dsdw, mut dr) = (buf(), buf(), buf());
    let (mut ix, mut is) = (buf(), buf());

    let mut iterations = 0;
    let mut status = IpStatus::MaxIterExceeded;
    let mut gap;
    loop {
        let theta = -&y;
        let scale = 1.0 + a.dot(&theta).abs();
        gap = lp.primal_value_with(&theta, &mut u)? - lp.dual_value(&x);
        let comp = *history.last().unwrap();
        if comp <= cfg.gap_tol * scale && gap.abs() <= cfg.gap_tol * scale {
            status = IpStatus::Converged;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        {
            let (xs, ss, zfs, wfs) = (&x.as_slice()[..rows], &s.as_slice()[..rows], &zf.as_slice()[..rows], &wf.as_slice()[..rows]);
            let (ixs, iss) = (&mut ix.as_mut_slice()[..rows], &mut is.as_mut_slice()[..rows]);
            let (ds_, zws, dzws) = (&mut d.as_mut_slice()[..rows], &mut zw.as_mut_slice()[..rows], &mut dzw.as_mut_slice()[..rows]);
            for i in 0..rows {
                ixs[i] = 1.0 / xs[i];
                iss[i] = 1.0 / ss[i];
                let di = 1.0 / (zfs[i] * ixs[i] + wfs[i] * iss[i]);
                ds_[i] = di;
                zws[i] = zfs[i] - wfs[i];
                dzws[i] = di * zws[i];
            }
        }
        let rhs = a - lp.apply_transpose(&x) + lp.apply_transpose(&dzw);
        let chol = lp.factor_normal(&d)?;
        let mut dy = chol.solve(&rhs);

        lp.apply_into(&dy, &mut u)?;
        affine_direction(&d, &u, &zw, [&ix, &is, &zf, &wf], [&mut dx, &mut ds, &mut dz, &mut dw]);
        let (mut deltap, mut deltad) = step_lengths(beta, [&x, &s, &zf, &wf], [&dx, &ds, &dz, &dw]);

        if deltap.min(deltad) < 1.0 {
            let mu0 = complementarity(&x, &s, &zf, &wf);
            let mut g = 0.0;
            for i in 0..rows {
                g += (x[i] + deltap * dx[i]) * (zf[i] + deltad * dz[i])
                    + (s[i] + deltap * ds[i]) * (wf[i] + deltad * dw[i]);
            }
            let mu = mu0 * (g / mu0).powi(3) / (2.0 * rows as f64);
            // Second-order terms, scaled so the corrected step stays dual feasible.
            {
                let (ixs, iss, ds_) = (&ix.as_slice()[..rows], &is.as_slice()[..rows], &d.as_slice()[..rows]);
                let (dxs, dss, dzs, dws) = (&dx.as_slice()[..rows], &ds.as_slice()[..rows], &dz.as_slice()[..rows], &dw.as_slice()[..rows]);
                let (dxdzs, dsdws, drs) = (&mut dxdz.as_mut_slice()[..rows], &mut dsdw.as_mut_slice()[..rows], &mut dr.as_mut_slice()[..rows]);
                for i in 0..rows {
                    dxdzs[i] = dxs[i] * dzs[i] * ixs[i];
                    dsdws[i] = dss[i] * dws[i] * iss[i];
                    drs[i] = ds_[i] * (mu * (iss[i] - ixs[i]) + dxdzs[i] - dsdws[i]);
                }
            }
            dy = chol.solve(&(&rhs + lp.apply_transpose(&dr)));
            lp.apply_into(&dy, &mut u)?;
            {
                let (ixs, iss, ds_, us) = (&ix.as_slice()[..rows], &is.as_slice()[..rows], &d.as_slice()[..rows], &u.as_slice()[..rows]);
                let (zfs, wfs, drs) = (&zf.as_slice()[..rows], &wf.as_slice()[..rows], &dr.as_slice()[..rows]);
                let (dxdzs, dsdws) = (&dxdz.as_slice()[..rows], &dsdw.as_slice()[..rows]);
                let (dxs, dss) = (&mut dx.as_mut_slice()[..rows], &mut ds.as_mut_slice()[..rows]);
                let (dzs, dws) = (&mut dz.as_mut_slice()[..rows], &mut dw.as_mut_slice()[..rows]);
                for i in 0..rows {
                    dxs[i] = ds_[i] * (us[i] - zfs[i] + wfs[i]) - drs[i];
                    dss[i] = -dxs[i];
                    dzs[i] = (mu - zfs[i] * dxs[i]) * ixs[i] - zfs[i] - dxdzs[i];
                    dws[i] = (mu - wfs[i] * dss[i]) * iss[i] - wfs[i] - dsdws[i];
                }
            }
            (deltap, deltad) = step_lengths(beta, [&x, &s, &zf, &wf], [&dx, &ds, &dz, &dw]);
        }

        x.axpy(deltap, &dx, 1.0);
        s.axpy(deltap, &ds, 1.0);
        y.axpy(deltad, &dy, 1.0);
        zf.axpy(deltad, &dz, 1.0);
        wf.axpy(deltad, &dw, 1.0);
        let comp = complementarity(&x, &s, &zf, &wf);
        history.push(comp);
        debug!(
            "ip iter={iterations} complementarity={comp:.6e} step_primal={deltap:.6} step_dual={deltad:.6}"
        );
    }

    let state = make_state(&x, &y, &zf, &wf, iterations, gap);
    Ok(IpSolution {
        theta: state.theta.clone(),
        zeta: x,
        state,
        status,
        iterations,
        gap,
        history,
        initial_kkt,
    })
}
