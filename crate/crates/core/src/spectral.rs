//! Quantile discrete Fourier transform and quantile periodogram from
//! trigonometric (spline) quantile regression at the Fourier frequencies.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::basis::{build_basis, QuantileGrid, SplineBasis};
use crate::error::{Result, SqrError};
use crate::io::fmt_float;
use crate::ip::IpConfig;
use crate::objective::SqrProblem;
use crate::select::{self, Criterion};
use crate::solve::{self, Solver};

/// Shortest series accepted by `sqdft`.
pub const MIN_SERIES_LEN: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    n: usize,
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    /// Fourier frequencies `2 pi v / n`, `v = 1..floor((n-1)/2)`.
    pub fn fourier(n: usize) -> Result<Self> {
        let count = n.saturating_sub(1) / 2;
        if count == 0 {
            return Err(SqrError::Shape(format!("no Fourier frequencies for n = {n}")));
        }
        let omegas = (1..=count).map(|v| 2.0 * PI * v as f64 / n as f64).collect();
        Ok(Self { n, omegas })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// Frequency index `v` (1-based) of column `i`.
    pub fn index(&self, i: usize) -> usize {
        i + 1
    }
}

/// `n x 3` design with columns `[1, cos(omega t), sin(omega t)]`, `t = 1..n`.
pub fn trig_design(n: usize, omega: f64) -> Result<DMatrix<f64>> {
    if !(omega > 0.0 && omega < PI) {
        return Err(SqrError::InvalidProblem(format!("frequency {omega} outside (0, pi)")));
    }
    Ok(DMatrix::from_fn(n, 3, |t, j| {
        let arg = omega * (t + 1) as f64;
        match j {
            0 => 1.0,
            1 => arg.cos(),
            _ => arg.sin(),
        }
    }))
}

/// How coefficients are estimated at each frequency.
#[derive(Clone, Debug, PartialEq)]
pub enum SpectralMethod {
    /// Independent quantile regression per level.
    Qr,
    /// SQR at a fixed spar.
    Sqr { spar: f64 },
    /// SQR with one spar shared by all frequencies, chosen by the average
    /// criterion over `spar_grid`.
    SqrAuto {
        criterion: Criterion,
        spar_grid: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct QSpectrum {
    /// `L x V`; `NaN` where the fit failed.
    pub qdft: DMatrix<Complex64>,
    /// `L x V`; `NaN` where the fit failed.
    pub qper: DMatrix<f64>,
    pub grid: QuantileGrid,
    pub freqs: FrequencyGrid,
    pub spar: Option<f64>,
    /// `(column, message)` for frequencies whose fit failed.
    pub failures: Vec<(usize, String)>,
}

impl QSpectrum {
    pub fn is_masked(&self, column: usize) -> bool {
        self.failures.iter().any(|(c, _)| *c == column)
    }

    /// Column of the largest periodogram value at `level`.
    pub fn peak(&self, level: usize) -> Option<usize> {
        let row = self.qper.row(level);
        row.iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }

    /// Columns of the `count` largest local maxima at `level`, largest first.
    pub fn local_peaks(&self, level: usize, count: usize) -> Vec<usize> {
        let row: Vec<f64> = self.qper.row(level).iter().copied().collect();
        let at = |i: isize| -> f64 {
            if i < 0 || i as usize >= row.len() || !row[i as usize].is_finite() {
                f64::NEG_INFINITY
            } else {
                row[i as usize]
            }
        };
        let mut peaks: Vec<usize> = (0..row.len())
            .filter(|&i| {
                let v = at(i as isize);
                v.is_finite() && v > at(i as isize - 1) && v >= at(i as isize + 1)
            })
            .collect();
        peaks.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        peaks.truncate(count);
        peaks
    }

    /// Sum over consecutive levels of `|qper[l+1, v] - qper[l, v]|`,
    /// restricted to levels with `lo <= tau <= hi`.
    pub fn total_variation(&self, column: usize, lo: f64, hi: f64) -> f64 {
        let vals: Vec<f64> = self
            .grid
            .levels()
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= lo - 1e-12 && t <= hi + 1e-12)
            .map(|(l, _)| self.qper[(l, column)])
            .collect();
        vals.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Long format: `tau, v, omega, qper, qdft_re, qdft_im`.
    pub fn write_long_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau", "v", "omega", "qper", "qdft_re", "qdft_im"])?;
        for (l, tau) in self.grid.levels().iter().enumerate() {
            for (i, omega) in self.freqs.omegas().iter().enumerate() {
                let q = self.qdft[(l, i)];
                w.write_record([
                    fmt_float(*tau),
                    self.freqs.index(i).to_string(),
                    fmt_float(*omega),
                    fmt_float(self.qper[(l, i)]),
                    fmt_float(q.re),
                    fmt_float(q.im),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Image-plot grid: one row per level, one column per frequency
    /// (header `tau,f_1,...` with `f = omega / 2 pi`).
    pub fn write_plot_grid(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["tau".to_string()];
        header.extend(self.freqs.omegas().iter().map(|o| fmt_float(o / (2.0 * PI))));
        w.write_record(&header)?;
        for (l, tau) in self.grid.levels().iter().enumerate() {
            let mut rec = vec![fmt_float(*tau)];
            rec.extend(self.qper.row(l).iter().map(|&v| fmt_float(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Entrywise `|qdft|^2 / n`.
pub fn qdft_to_qper(qdft: &DMatrix<Complex64>, n: usize) -> DMatrix<f64> {
    qdft.map(|z| z.norm_sqr() / n as f64)
}

/// `(n / 2)(b2 - i b3)` from the cosine and sine coefficients.
pub fn qdft_entry(n: usize, cos_coef: f64, sin_coef: f64) -> Complex64 {
    Complex64::new(cos_coef, -sin_coef) * (n as f64 / 2.0)
}

fn ip_config(solver: &Solver) -> IpConfig {
    match solver {
        Solver::InteriorPoint(cfg) => cfg.clone(),
        Solver::Gradient(_) => IpConfig::default(),
    }
}

fn spectral_basis(grid: &QuantileGrid) -> Result<SplineBasis> {
    if grid.len() == 1 {
        Ok(SplineBasis::constant(grid))
    } else {
        build_basis(grid, None)
    }
}

/// QDFT and periodogram of `series` on `grid`.
pub fn sqdft(series: &[f64], grid: &QuantileGrid, method: &SpectralMethod, solver: &Solver) -> Result<QSpectrum> {
    let n = series.len();
    if n < MIN_SERIES_LEN {
        return Err(SqrError::Shape(format!("series length {n} < {MIN_SERIES_LEN}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(SqrError::InvalidProblem("series contains non-finite values".into()));
    }
    let freqs = FrequencyGrid::fourier(n)?;
    let y = DVector::from_column_slice(series);
    let designs: Vec<DMatrix<f64>> = freqs
        .omegas()
        .iter()
        .map(|&w| trig_design(n, w))
        .collect::<Result<_>>()?;

    let (coefs, spar): (Vec<Result<DMatrix<f64>>>, Option<f64>) = match method {
        SpectralMethod::Qr => {
            let cfg = ip_config(solver);
            let out = designs
                .par_iter()
                .map(|x| solve::independent_qr(x, &y, grid, &cfg))
                .collect();
            (out, None)
        }
        SpectralMethod::Sqr { spar } => {
            let basis = spectral_basis(grid)?;
            let out = designs
                .par_iter()
                .map(|x| {
                    let c = select::spar_to_c(x, grid, &basis, *spar)?.c;
                    let prob = SqrProblem::new(x.clone(), y.clone(), grid.clone(), basis.clone(), c)?;
                    solve::fit(&prob, solver).map(|f| f.beta)
                })
                .collect();
            (out, Some(*spar))
        }
        SpectralMethod::SqrAuto { criterion, spar_grid } => {
            let basis = spectral_basis(grid)?;
            let problems: Vec<SqrProblem> = designs
                .iter()
                .map(|x| SqrProblem::new(x.clone(), y.clone(), grid.clone(), basis.clone(), 0.0))
                .collect::<Result<_>>()?;
            let shared = select::select_spar_shared(&problems, spar_grid, *criterion, solver)?;
            let chosen = shared.chosen;
            let spar = shared.spars[chosen];
            let out = shared
                .coefficients
                .into_iter()
                .nth(chosen)
                .unwrap_or_default()
                .into_iter()
                .map(|b| b.ok_or(SqrError::NotConverged(format!("fit failed at spar {spar}"))))
                .collect();
            (out, Some(spar))
        }
    };

    let l = grid.len();
    let v = freqs.len();
    let mut qdft = DMatrix::from_element(l, v, Complex64::new(f64::NAN, f64::NAN));
    let mut failures = Vec::new();
    for (i, result) in coefs.into_iter().enumerate() {
        match result {
            Ok(beta) => {
                for lev in 0..l {
                    qdft[(lev, i)] = qdft_entry(n, beta[(lev, 1)], beta[(lev, 2)]);
                }
            }
            Err(e) => {
                log::warn!("frequency index {} failed: {e}", freqs.index(i));
                failures.push((i, e.to_string()));
            }
        }
    }
    if failures.len() == v {
        return Err(SqrError::SpectrumFailed);
    }
    let qper = qdft_to_qper(&qdft, n);
    Ok(QSpectrum {
        qdft,
        qper,
        grid: grid.clone(),
        freqs,
        spar,
        failures,
    })
}

/// Reads a long-format QDFT CSV (columns `tau, v, omega, qdft_re, qdft_im`;
/// extra columns ignored) and recomputes the periodogram. The series length
/// is recovered from `round(2 pi v / omega)`.
pub fn read_qdft_csv(path: &Path) -> Result<QSpectrum> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SqrError::Ingest {
                row: 0,
                column: name.to_string(),
                message: "missing column".into(),
            })
    };
    let (ct, cv, co, cre, cim) = (col("tau")?, col("v")?, col("omega")?, col("qdft_re")?, col("qdft_im")?);
    let mut taus: Vec<f64> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    let mut vs: BTreeMap<usize, f64> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| SqrError::Ingest {
                row: row + 1,
                column: headers.get(c).unwrap_or("").to_string(),
                message: format!("not a number: {raw:?}"),
            })
        };
        let tau = field(ct)?;
        let v = field(cv)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(SqrError::Ingest {
                row: row + 1,
                column: "v".into(),
                message: "frequency index must be a positive integer".into(),
            });
        }
        let omega = field(co)?;
        let z = Complex64::new(field(cre)?, field(cim)?);
        let level = match taus.iter().position(|&t| t == tau) {
            Some(p) => p,
            None => {
                taus.push(tau);
                taus.len() - 1
            }
        };
        vs.insert(v as usize, omega);
        cells.insert((level, v as usize), z);
    }
    let (&v_first, &omega_first) = vs.iter().next().ok_or(SqrError::Ingest {
        row: 0,
        column: "v".into(),
        message: "no rows".into(),
    })?;
    let n = (2.0 * PI * v_first as f64 / omega_first).round() as usize;
    let freqs = FrequencyGrid::fourier(n)?;
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let grid = QuantileGrid::with_unit_weights(order.iter().map(|&i| taus[i]).collect())?;
    let mut qdft = DMatrix::from_element(grid.len(), freqs.len(), Complex64::new(f64::NAN, f64::NAN));
    for (&(level, v), &z) in &cells {
        if v == 0 || v > freqs.len() {
            return Err(SqrError::Ingest {
                row: 0,
                column: "v".into(),
                message: format!("frequency index {v} out of range for n = {n}"),
            });
        }
        let sorted = order.iter().position(|&i| i == level).unwrap_or(level);
        qdft[(sorted, v - 1)] = z;
    }
    let qper = qdft_to_qper(&qdft, n);
    Ok(QSpectrum {
        qdft,
        qper,
        grid,
        freqs,
        spar: None,
        failures: Vec::new(),
    })
}
