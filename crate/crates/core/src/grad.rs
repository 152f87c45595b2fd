//! First-order and quasi-Newton solvers that minimise the SQR objective
//! directly over `theta`, using the kink-zero subgradient as the gradient.
//!
//! * BFGS: variable-metric iteration with backtracking (Armijo) line search,
//!   inverse-Hessian resets on failed curvature or failed searches.
//! * ADAM: fixed step size, bias-corrected moment estimates.
//! * GRAD: ADAM whose step size is re-chosen periodically, after a warm-up,
//!   by a short line search over a geometric ladder of trial steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SqrError};
use crate::objective::{objective, subgradient, SolverMethod, SqrProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradAlgorithm {
    Bfgs,
    Adam,
    Grad,
}

impl GradAlgorithm {
    pub fn method(self) -> SolverMethod {
        match self {
            GradAlgorithm::Bfgs => SolverMethod::Bfgs,
            GradAlgorithm::Adam => SolverMethod::Adam,
            GradAlgorithm::Grad => SolverMethod::Grad,
        }
    }
}

impl std::str::FromStr for GradAlgorithm {
    type Err = SqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bfgs" => Ok(GradAlgorithm::Bfgs),
            "adam" => Ok(GradAlgorithm::Adam),
            "grad" => Ok(GradAlgorithm::Grad),
            other => Err(SqrError::Config(format!("unknown gradient algorithm {other:?}"))),
        }
    }
}

/// Start and fallback rules of the GRAD line search.
///
/// | option | first trial based on | fallback when nothing is accepted |
/// |--------|----------------------|-----------------------------------|
/// | I      | default step         | default step                      |
/// | II     | default step         | default step x discount           |
/// | III    | current step         | current step x discount           |
/// | IV     | current step         | current step                      |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LsOption {
    I,
    Ii,
    Iii,
    Iv,
}

impl std::str::FromStr for LsOption {
    type Err = SqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(LsOption::I),
            "ii" | "2" => Ok(LsOption::Ii),
            "iii" | "3" => Ok(LsOption::Iii),
            "iv" | "4" => Ok(LsOption::Iv),
            other => Err(SqrError::Config(format!("unknown line-search option {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradConfig {
    pub algorithm: GradAlgorithm,
    pub max_iter: usize,
    /// ADAM/GRAD default step size.
    pub step0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// GRAD: iterations before the first line search.
    pub warmup: usize,
    /// GRAD: iterations between line searches.
    pub ls_every: usize,
    /// GRAD: number of step reductions per line search.
    pub ls_trials: usize,
    /// Backtracking factor shared by BFGS and GRAD.
    pub discount: f64,
    pub ls_option: LsOption,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    /// BFGS relative objective-change tolerance.
    pub reltol: f64,
    /// Iterations at which to keep a copy of `theta` (0 = starting point).
    pub checkpoints: Vec<usize>,
}

impl Default for GradConfig {
    fn default() -> Self {
        Self {
            algorithm: GradAlgorithm::Bfgs,
            max_iter: 1000,
            step0: 0.4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup: 70,
            ls_every: 20,
            ls_trials: 5,
            discount: 0.2,
            ls_option: LsOption::I,
            armijo_c: 1e-4,
            reltol: f64::EPSILON.sqrt(),
            checkpoints: Vec::new(),
        }
    }
}

impl GradConfig {
    pub fn with_algorithm(algorithm: GradAlgorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SqrError::Config(msg.to_string()));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        if self.ls_trials == 0 {
            return bad("ls_trials must be >= 1");
        }
        if self.ls_every == 0 {
            return bad("ls_every must be >= 1");
        }
        if !(self.step0 > 0.0) {
            return bad("step0 must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("ADAM moment constants must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOutcome {
    MaxIter,
    /// BFGS stopped because the objective no longer changed.
    Converged,
    /// ADAM/GRAD met an exactly zero subgradient.
    ZeroGradient,
}

impl GradOutcome {
    pub fn is_converged(self) -> bool {
        matches!(self, GradOutcome::Converged | GradOutcome::ZeroGradient)
    }
}

/// One GRAD line search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineSearchRecord {
    pub iteration: usize,
    pub trials: Vec<f64>,
    pub accepted: Option<f64>,
    pub returned: f64,
}

#[derive(Clone, Debug)]
pub struct GradTrace {
    pub initial_objective: f64,
    /// Objective after each iteration.
    pub objective: Vec<f64>,
    /// Step size used in each iteration.
    pub steps: Vec<f64>,
    pub line_searches: Vec<LineSearchRecord>,
    /// `(iteration, theta)` copies at the requested checkpoints.
    pub snapshots: Vec<(usize, DVector<f64>)>,
    pub outcome: GradOutcome,
}

impl GradTrace {
    fn new(initial_objective: f64) -> Self {
        Self {
            initial_objective,
            objective: Vec::new(),
            steps: Vec::new(),
            line_searches: Vec::new(),
            snapshots: Vec::new(),
            outcome: GradOutcome::MaxIter,
        }
    }

    pub fn iterations(&self) -> usize {
        self.objective.len()
    }

    fn record(&mut self, cfg: &GradConfig, iteration: usize, value: f64, step: f64, theta: &DVector<f64>) {
        self.objective.push(value);
        self.steps.push(step);
        if cfg.checkpoints.contains(&iteration) {
            self.snapshots.push((iteration, theta.clone()));
        }
    }

    /// Objective value after `iteration` (0 = starting point).
    pub fn objective_at(&self, iteration: usize) -> Option<f64> {
        if iteration == 0 {
            Some(self.initial_objective)
        } else {
            self.objective.get(iteration - 1).copied()
        }
    }

    pub fn snapshot(&self, iteration: usize) -> Option<&DVector<f64>> {
        self.snapshots.iter().find(|(i, _)| *i == iteration).map(|(_, t)| t)
    }
}

/// Dispatch on `cfg.algorithm`.
pub fn solve(prob: &SqrProblem, theta0: DVector<f64>, cfg: &GradConfig) -> Result<(DVector<f64>, GradTrace)> {
    match cfg.algorithm {
        GradAlgorithm::Bfgs => solve_bfgs(prob, theta0, cfg),
        GradAlgorithm::Adam => solve_adam(prob, theta0, cfg),
        GradAlgorithm::Grad => solve_grad(prob, theta0, cfg),
    }
}

/// Generic BFGS minimiser over a user objective and gradient.
///
/// Variable-metric iteration with an inverse-Hessian approximation that is
/// reset to the identity after a failed curvature check, an uphill
/// direction, a stalled step, or `2 * dim` gradient evaluations without a
/// reset. Stops when a freshly reset iteration makes no relative progress.
pub fn bfgs_minimize<F, G>(
    f: F,
    grad: G,
    theta0: DVector<f64>,
    cfg: &GradConfig,
) -> Result<(DVector<f64>, GradTrace)>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    cfg.validate()?;
    const REL_TEST: f64 = 10.0;
    let n = theta0.len();
    let mut b = theta0;
    let mut fmin = f(&b)?;
    if !fmin.is_finite() {
        return Err(SqrError::InvalidProblem("objective not finite at starting point".into()));
    }
    let mut trace = GradTrace::new(fmin);
    if cfg.checkpoints.contains(&0) {
        trace.snapshots.push((0, b.clone()));
    }
    let mut g = grad(&b)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut gradcount = 1usize;
    let mut ilast = gradcount;
    let mut iter = 0usize;
    trace.outcome = GradOutcome::Converged;
    if cfg.max_iter == 0 {
        trace.outcome = GradOutcome::MaxIter;
        return Ok((b, trace));
    }

    loop {
        if ilast == gradcount {
            h.fill_with_identity();
        }
        let x = b.clone();
        let g_old = g.clone();
        let t = -(&h * &g);
        let gradproj = t.dot(&g);
        let mut count;
        if gradproj < 0.0 {
            let mut step = 1.0;
            let mut f_new = fmin;
            loop {
                count = 0;
                for i in 0..n {
                    b[i] = x[i] + step * t[i];
                    if REL_TEST + x[i] == REL_TEST + b[i] {
                        count += 1;
                    }
                }
                if count == n {
                    break;
                }
                f_new = f(&b)?;
                if f_new.is_finite() && f_new <= fmin + gradproj * step * cfg.armijo_c {
                    break;
                }
                step *= cfg.discount;
            }
            if count == n {
                b.copy_from(&x);
            } else if (f_new - fmin).abs() <= cfg.reltol * (fmin.abs() + cfg.reltol) {
                // Accepted, but negligible progress: keep the point, reset.
                count = n;
                fmin = f_new;
            }
            if count < n {
                fmin = f_new;
                g = grad(&b)?;
                gradcount += 1;
                iter += 1;
                trace.record(cfg, iter, fmin, step, &b);
                let s = &t * step;
                let yk = &g - &g_old;
                let d1 = s.dot(&yk);
                if d1 > 0.0 {
                    let hy = &h * &yk;
                    let d2 = 1.0 + yk.dot(&hy) / d1;
                    for i in 0..n {
                        for j in 0..n {
                            h[(i, j)] += (d2 * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]) / d1;
                        }
                    }
                } else {
                    ilast = gradcount;
                }
            } else if ilast < gradcount {
                count = 0;
                ilast = gradcount;
            }
        } else {
            // Uphill: reset unless just reset.
            count = 0;
            if ilast == gradcount {
                count = n;
            } else {
                ilast = gradcount;
            }
        }
        if iter >= cfg.max_iter {
            trace.outcome = GradOutcome::MaxIter;
            break;
        }
        if gradcount - ilast > 2 * n {
            ilast = gradcount;
        }
        if count == n && ilast == gradcount {
            break;
        }
    }
    Ok((b, trace))
}

/// BFGS on the SQR objective.
pub fn solve_bfgs(prob: &SqrProblem, theta0: DVector<f64>, cfg: &GradConfig) -> Result<(DVector<f64>, GradTrace)> {
    prob.check_theta(&theta0)?;
    bfgs_minimize(|t| objective(prob, t), |t| subgradient(prob, t), theta0, cfg)
}

/// ADAM on the SQR objective.
pub fn solve_adam(prob: &SqrProblem, theta0: DVector<f64>, cfg: &GradConfig) -> Result<(DVector<f64>, GradTrace)> {
    adam_like(prob, theta0, cfg, false)
}

/// ADAM with the periodic limited line search.
pub fn solve_grad(prob: &SqrProblem, theta0: DVector<f64>, cfg: &GradConfig) -> Result<(DVector<f64>, GradTrace)> {
    adam_like(prob, theta0, cfg, true)
}

/// Result of one limited line search.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitedSearch {
    pub trials: Vec<f64>,
    pub accepted: Option<f64>,
    pub step: f64,
}

/// Limited line search: starting from `min(1, s0 / discount^(trials/2))`,
/// test the step and shrink by `discount` up to `trials` times.
/// `accept(s)` decides whether a trial step is acceptable.
pub fn limited_line_search<A>(
    default_step: f64,
    current_step: f64,
    cfg: &GradConfig,
    mut accept: A,
) -> Result<LimitedSearch>
where
    A: FnMut(f64) -> Result<bool>,
{
    let s0 = match cfg.ls_option {
        LsOption::I | LsOption::Ii => default_step,
        LsOption::Iii | LsOption::Iv => current_step,
    };
    let b = cfg.discount;
    let mut s = (s0 * b.powi(-((cfg.ls_trials / 2) as i32))).min(1.0);
    let mut trials = Vec::with_capacity(cfg.ls_trials + 1);
    let mut count = 0;
    let accepted = loop {
        trials.push(s);
        if accept(s)? {
            break Some(s);
        }
        if count >= cfg.ls_trials {
            break None;
        }
        s *= b;
        count += 1;
    };
    let step = match (accepted, cfg.ls_option) {
        (Some(s), _) => s,
        (None, LsOption::I | LsOption::Iv) => s0,
        (None, LsOption::Ii | LsOption::Iii) => s0 * b,
    };
    Ok(LimitedSearch {
        trials,
        accepted,
        step,
    })
}

fn adam_like(
    prob: &SqrProblem,
    theta0: DVector<f64>,
    cfg: &GradConfig,
    line_search: bool,
) -> Result<(DVector<f64>, GradTrace)> {
    cfg.validate()?;
    prob.check_theta(&theta0)?;
    let dim = theta0.len();
    let mut theta = theta0;
    let mut trace = GradTrace::new(objective(prob, &theta)?);
    if cfg.checkpoints.contains(&0) {
        trace.snapshots.push((0, theta.clone()));
    }
    let mut m = DVector::<f64>::zeros(dim);
    let mut v = DVector::<f64>::zeros(dim);
    let mut step = cfg.step0;
    let mut f_current = trace.initial_objective;
    for k in 1..=cfg.max_iter {
        let g = subgradient(prob, &theta)?;
        if g.iter().all(|&x| x == 0.0) {
            trace.outcome = GradOutcome::ZeroGradient;
            return Ok((theta, trace));
        }
        m = &m * cfg.adam_beta1 + &g * (1.0 - cfg.adam_beta1);
        v = &v * cfg.adam_beta2 + g.component_mul(&g) * (1.0 - cfg.adam_beta2);
        let bc1 = 1.0 - cfg.adam_beta1.powi(k as i32);
        let bc2 = 1.0 - cfg.adam_beta2.powi(k as i32);
        let direction = DVector::from_fn(dim, |i, _| {
            -(m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps)
        });

        if line_search && k > cfg.warmup && (k - cfg.warmup - 1).is_multiple_of(cfg.ls_every) {
            let slope = g.dot(&direction);
            let search = limited_line_search(cfg.step0, step, cfg, |s| {
                let trial = &theta + &direction * s;
                let f = objective(prob, &trial)?;
                Ok(f.is_finite() && f <= f_current + cfg.armijo_c * s * slope)
            })?;
            step = search.step;
            trace.line_searches.push(LineSearchRecord {
                iteration: k,
                trials: search.trials,
                accepted: search.accepted,
                returned: search.step,
            });
        }

        theta.axpy(step, &direction, 1.0);
        f_current = objective(prob, &theta)?;
        trace.record(cfg, k, f_current, step, &theta);
    }
    trace.outcome = GradOutcome::MaxIter;
    Ok((theta, trace))
}
