//! Quantile autoregression (QAR) generator and coefficient error metrics.

use nalgebra::{DMatrix, DVector};
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::QuantileGrid;
use crate::error::{Result, SqrError};

/// Standard normal quantile function (Wichura's AS 241, PPND16).
/// Relative accuracy about 1e-16 in (0, 1).
#[allow(clippy::excessive_precision)] // coefficients kept exactly as published
pub fn normal_quantile(p: f64) -> Result<f64> {
    const A: [f64; 8] = [
        3.387132872796366608,
        133.14166789178437745,
        1971.5909503065514427,
        13731.693765509461125,
        45921.953931549871457,
        67265.770927008700853,
        33430.575583588128105,
        2509.0809287301226727,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313330701600911252,
        687.1870074920579083,
        5394.1960214247511077,
        21213.794301586595867,
        39307.89580009271061,
        28729.085735721942674,
        5226.495278852545925,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734,
        4.6303378461565452959,
        5.7694972214606914055,
        3.64784832476320460504,
        1.27045825245236838258,
        0.24178072517745061177,
        0.0227238449892691845833,
        7.7454501427834140764e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187,
        1.6763848301838038494,
        0.68976733498510000455,
        0.14810397642748007459,
        0.0151986665636164571966,
        5.475938084995344946e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.6579046435011037772,
        5.4637849111641143699,
        1.7848265399172913358,
        0.29656057182850489123,
        0.026532189526576123093,
        0.0012426609473880784386,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.59983220655588793769,
        0.13692988092273580531,
        0.0148753612908506148525,
        7.868691311456132591e-4,
        1.8463183175100546818e-5,
        1.4215117583164458887e-7,
        2.04426310338993978564e-15,
    ];
    fn horner(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    if !(p > 0.0 && p < 1.0) {
        return Err(SqrError::Domain(p));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * horner(&A, r) / horner(&B, r));
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        let r = r - 5.0;
        horner(&E, r) / horner(&F, r)
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// Which QAR coefficient functions to simulate from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QarModel {
    /// `a0 = sigma0 * z(u)`, `a1 = 0.85 + 0.1u + 0.25(u - 0.5)I(u > 0.5)`.
    Kinked,
    /// Original linear variant: `a0 = z(u)`, `a1 = 0.85 + 0.25u`.
    Linear,
    /// `a1 = 0`: i.i.d. `N(0, sigma0^2)` draws.
    WhiteNoise,
}

impl std::str::FromStr for QarModel {
    type Err = SqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kinked" => Ok(QarModel::Kinked),
            "linear" => Ok(QarModel::Linear),
            "white-noise" | "white_noise" => Ok(QarModel::WhiteNoise),
            other => Err(SqrError::Config(format!("unknown QAR model {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QarSpec {
    pub n: usize,
    pub sigma0: f64,
    pub a1_intercept: f64,
    pub a1_slope: f64,
    pub a1_kink: f64,
    pub burn_in: usize,
    pub seed: u64,
    pub model: QarModel,
}

impl Default for QarSpec {
    fn default() -> Self {
        Self {
            n: 200,
            sigma0: 0.4,
            a1_intercept: 0.85,
            a1_slope: 0.1,
            a1_kink: 0.25,
            burn_in: 200,
            seed: 1,
            model: QarModel::Kinked,
        }
    }
}

impl QarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SqrError::Config("series length must be >= 1".into()));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(SqrError::Config("sigma0 must be positive".into()));
        }
        Ok(())
    }

    /// `(a0(u), a1(u))` under this spec.
    pub fn truth(&self, u: f64) -> Result<(f64, f64)> {
        let z = normal_quantile(u)?;
        Ok(match self.model {
            QarModel::Kinked => {
                let kink = if u > 0.5 { self.a1_kink * (u - 0.5) } else { 0.0 };
                (self.sigma0 * z, self.a1_intercept + self.a1_slope * u + kink)
            }
            QarModel::Linear => (z, 0.85 + 0.25 * u),
            QarModel::WhiteNoise => (self.sigma0 * z, 0.0),
        })
    }

    /// `L x 2` matrix of true coefficients on `grid`.
    pub fn truth_on_grid(&self, grid: &QuantileGrid) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(grid.len(), 2);
        for (lev, &u) in grid.levels().iter().enumerate() {
            let (a0, a1) = self.truth(u)?;
            out[(lev, 0)] = a0;
            out[(lev, 1)] = a1;
        }
        Ok(out)
    }
}

/// True coefficients of the default kinked model.
pub fn qar_truth(u: f64) -> Result<(f64, f64)> {
    QarSpec::default().truth(u)
}

/// One realisation of length `spec.n` (replicate 0).
pub fn simulate_qar(spec: &QarSpec) -> Result<Vec<f64>> {
    simulate_qar_replicate(spec, 0)
}

/// Realisation for replicate `index`, on its own deterministic stream.
pub fn simulate_qar_replicate(spec: &QarSpec, index: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(spec.n);
    for t in 0..spec.burn_in + spec.n {
        let u: f64 = rng.sample(Open01);
        let (a0, a1) = spec.truth(u)?;
        prev = a0 + a1 * prev;
        if t >= spec.burn_in {
            out.push(prev);
        }
    }
    Ok(out)
}

/// Lag-one regression design: response `y_t` and rows `[1, y_{t-1}]`, `t = 2..n`.
pub fn qar_design(series: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if series.len() < 2 {
        return Err(SqrError::Shape("QAR design needs at least two observations".into()));
    }
    let m = series.len() - 1;
    let x = DMatrix::from_fn(m, 2, |i, j| if j == 0 { 1.0 } else { series[i] });
    let y = DVector::from_fn(m, |i, _| series[i + 1]);
    Ok((x, y))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mae {
    pub per_coef: Vec<f64>,
    pub total: f64,
}

/// Mean absolute error across levels, per coefficient column.
pub fn mae(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Mae> {
    if estimate.shape() != truth.shape() {
        return Err(SqrError::Shape(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let rows = estimate.nrows().max(1) as f64;
    let per_coef: Vec<f64> = (0..estimate.ncols())
        .map(|j| {
            estimate
                .column(j)
                .iter()
                .zip(truth.column(j).iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / rows
        })
        .collect();
    let total = per_coef.iter().sum();
    Ok(Mae { per_coef, total })
}

/// Outcome of checking that `u -> a0(u) + a1(u) y` increases over the
/// observed range of `y`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub y_min: f64,
    pub y_max: f64,
    /// Smallest increment between consecutive grid points.
    pub min_increment: f64,
    pub monotone: bool,
}

/// Checks monotonicity at the extremes of `series` on a uniform `u` grid of
/// `points` interior values. The map is affine in `y`, so the extremes suffice.
pub fn check_monotonicity(spec: &QarSpec, series: &[f64], points: usize) -> Result<MonotonicityReport> {
    if series.is_empty() || points < 2 {
        return Err(SqrError::Shape("need a non-empty series and at least two grid points".into()));
    }
    let y_min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let us: Vec<f64> = (1..=points).map(|i| i as f64 / (points + 1) as f64).collect();
    let coefs: Vec<(f64, f64)> = us.iter().map(|&u| spec.truth(u)).collect::<Result<_>>()?;
    let mut min_increment = f64::INFINITY;
    for &y in &[y_min, y_max] {
        for w in coefs.windows(2) {
            let d = (w[1].0 + w[1].1 * y) - (w[0].0 + w[0].1 * y);
            min_increment = min_increment.min(d);
        }
    }
    Ok(MonotonicityReport {
        y_min,
        y_max,
        min_increment,
        monotone: min_increment > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantile_table_values() {
        let cases = [
            (0.975, 1.959963984540054),
            (0.5, 0.0),
            (0.9, 1.2815515655446004),
            (0.05, -1.6448536269514729),
            (1e-10, -6.361340902404056),
        ];
        for (p, z) in cases {
            let got = normal_quantile(p).unwrap();
            assert!((got - z).abs() < 1e-9 * (1.0 + z.abs()), "{p}: {got} vs {z}");
        }
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn truth_values() {
        let (a0, a1) = qar_truth(0.5).unwrap();
        assert_eq!(a0, 0.0);
        assert!((a1 - 0.9).abs() < 1e-15);
        let (_, a1) = qar_truth(0.75).unwrap();
        assert!((a1 - 0.9875).abs() < 1e-15);
        let (a0, _) = qar_truth(0.975).unwrap();
        assert!((a0 - 0.7839856).abs() < 1e-6);
        assert!(matches!(qar_truth(1.2), Err(SqrError::Domain(_))));
    }

    #[test]
    fn a1_continuous_at_kink() {
        let (_, left) = qar_truth(0.5 - 1e-12).unwrap();
        let (_, right) = qar_truth(0.5 + 1e-12).unwrap();
        assert!((left - 0.9).abs() < 1e-10 && (right - 0.9).abs() < 1e-10);
    }

    #[test]
    fn replicates_are_deterministic_and_distinct() {
        let spec = QarSpec::default();
        let a = simulate_qar_replicate(&spec, 3).unwrap();
        let b = simulate_qar_replicate(&spec, 3).unwrap();
        let c = simulate_qar_replicate(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 200);
    }

    #[test]
    fn white_noise_variance() {
        let spec = QarSpec {
            n: 10_000,
            model: QarModel::WhiteNoise,
            ..QarSpec::default()
        };
        let y = simulate_qar(&spec).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        assert!((var - 0.16).abs() < 0.02, "{var}");
    }

    #[test]
    fn mae_offsets() {
        let truth = DMatrix::from_fn(5, 2, |i, j| (i + j) as f64);
        let zero = mae(&truth, &truth).unwrap();
        assert_eq!(zero.total, 0.0);
        let mut est = truth.clone();
        est.column_mut(1).add_scalar_mut(0.01);
        let m = mae(&est, &truth).unwrap();
        assert!((m.per_coef[1] - 0.01).abs() < 1e-12 && m.per_coef[0] == 0.0);
        assert!(mae(&est.columns(0, 1).into_owned(), &truth).is_err());
    }

    #[test]
    fn design_shapes() {
        let (x, y) = qar_design(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.shape(), (2, 2));
        assert_eq!(x[(1, 1)], 2.0);
        assert_eq!(y[1], 3.0);
    }
}
