//! CSV ingest and export. Floats are written with the shortest
//! representation that round-trips exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::QuantileGrid;
use crate::error::{Result, SqrError};

/// Response and design read from a CSV file.
#[derive(Clone, Debug)]
pub struct RegressionData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// One name per design column (`"(Intercept)"` first when requested).
    pub names: Vec<String>,
}

pub const INTERCEPT: &str = "(Intercept)";

/// Reads the named columns. Rows are 1-based in errors, counting the header
/// as row 0.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| SqrError::Ingest {
                    row: 0,
                    column: name.to_string(),
                    message: "column not found in header".into(),
                })
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); names.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SqrError::Ingest {
            row: r + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        for (k, &c) in idx.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("").trim();
            let value = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| SqrError::Ingest {
                row: r + 1,
                column: names[k].to_string(),
                message: if raw.is_empty() {
                    "missing value".into()
                } else {
                    format!("not a finite number: {raw:?}")
                },
            })?;
            out[k].push(value);
        }
    }
    if out.first().is_none_or(|c| c.is_empty()) {
        return Err(SqrError::Ingest {
            row: 1,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    Ok(out)
}

/// Single numeric column.
pub fn read_series(path: &Path, column: &str) -> Result<Vec<f64>> {
    Ok(read_columns(path, &[column])?.remove(0))
}

pub fn read_regression(path: &Path, response: &str, regressors: &[&str], intercept: bool) -> Result<RegressionData> {
    let mut names: Vec<&str> = vec![response];
    names.extend_from_slice(regressors);
    let cols = read_columns(path, &names)?;
    let n = cols[0].len();
    let offset = usize::from(intercept);
    let p = regressors.len() + offset;
    if p == 0 {
        return Err(SqrError::Config("design has no columns".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j < offset { 1.0 } else { cols[j - offset + 1][i] });
    let y = DVector::from_vec(cols[0].clone());
    let mut out_names = Vec::with_capacity(p);
    if intercept {
        out_names.push(INTERCEPT.to_string());
    }
    out_names.extend(regressors.iter().map(|s| s.to_string()));
    Ok(RegressionData { x, y, names: out_names })
}

/// Shortest text that parses back to `v`; extreme magnitudes use an exponent.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// `tau, coefficient, estimate`, level-major.
pub fn write_beta(path: &Path, grid: &QuantileGrid, names: &[String], beta: &DMatrix<f64>) -> Result<()> {
    if beta.shape() != (grid.len(), names.len()) {
        return Err(SqrError::Shape(format!(
            "beta is {:?}, expected ({}, {})",
            beta.shape(),
            grid.len(),
            names.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau", "coefficient", "estimate"])?;
    for (l, tau) in grid.levels().iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            w.write_record([fmt_float(*tau), name.clone(), fmt_float(beta[(l, j)])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_beta`]: `(levels, names, beta)`.
pub fn read_beta(path: &Path) -> Result<(Vec<f64>, Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut levels: Vec<f64> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize, col: &str| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| SqrError::Ingest {
                row: r + 1,
                column: col.into(),
                message: format!("not a number: {raw:?}"),
            })
        };
        let tau = num(0, "tau")?;
        let name = rec.get(1).unwrap_or("").to_string();
        let est = num(2, "estimate")?;
        let l = levels.iter().position(|&t| t == tau).unwrap_or_else(|| {
            levels.push(tau);
            levels.len() - 1
        });
        let j = names.iter().position(|s| *s == name).unwrap_or_else(|| {
            names.push(name);
            names.len() - 1
        });
        cells.push((l, j, est));
    }
    let mut beta = DMatrix::from_element(levels.len(), names.len(), f64::NAN);
    for (l, j, v) in cells {
        beta[(l, j)] = v;
    }
    Ok((levels, names, beta))
}

/// `coefficient, basis, value` with `theta` stacked per coefficient.
pub fn write_theta(path: &Path, names: &[String], k: usize, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != names.len() * k {
        return Err(SqrError::Shape(format!(
            "theta has length {}, expected {}",
            theta.len(),
            names.len() * k
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["coefficient", "basis", "value"])?;
    for (j, name) in names.iter().enumerate() {
        for b in 0..k {
            w.write_record([name.clone(), b.to_string(), fmt_float(theta[j * k + b])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t, <name>` with `t` starting at 1.
pub fn write_series(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", name])?;
    for (t, v) in values.iter().enumerate() {
        w.write_record([(t + 1).to_string(), fmt_float(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub type CsvWriter = csv::Writer<std::fs::File>;

/// Plain CSV writer for tables whose columns are only known at run time.
pub fn csv_writer(path: &Path) -> Result<CsvWriter> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes serialisable rows with a header taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-level diagnostics of a fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelDiagnostics {
    pub tau: f64,
    pub fidelity: f64,
    pub complexity: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn beta_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("beta.csv");
        let grid = QuantileGrid::from_range(0.1, 0.9, 0.2).unwrap();
        let names = vec![INTERCEPT.to_string(), "x".to_string()];
        let beta = DMatrix::from_fn(grid.len(), 2, |i, j| (i as f64 + 0.1).sqrt() / (j as f64 + 3.0) * 1e-7);
        write_beta(&path, &grid, &names, &beta).unwrap();
        let (levels, back_names, back) = read_beta(&path).unwrap();
        assert_eq!(levels, grid.levels());
        assert_eq!(back_names, names);
        assert_eq!(back, beta);
    }

    #[test]
    fn ingest_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "y,x\n1,2\n3,\n5,6").unwrap();
        let err = read_regression(&path, "y", &["x"], true).unwrap_err();
        match err {
            SqrError::Ingest { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "x");
            }
            other => panic!("{other:?}"),
        }
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "y,x\n1,NaN").unwrap();
        assert!(matches!(read_series(&path, "x"), Err(SqrError::Ingest { row: 1, .. })));
        assert!(matches!(read_series(&path, "z"), Err(SqrError::Ingest { row: 0, .. })));
    }

    #[test]
    fn regression_design_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,b,y\n1,2,3\n4,5,6\n").unwrap();
        let d = read_regression(&path, "y", &["b", "a"], true).unwrap();
        assert_eq!(d.names, vec![INTERCEPT, "b", "a"]);
        assert_eq!(d.x.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 5.0, 4.0]);
        assert_eq!(d.y[1], 6.0);
    }
}
