//! Bundled public datasets.

use crate::error::{Result, SqrError};

const ENGEL_CSV: &str = include_str!("../data/engel.csv");
const SUNSPOTS_CSV: &str = include_str!("../data/sunspots.csv");

fn two_columns(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| SqrError::Ingest {
                    row: row + 1,
                    column: c.to_string(),
                    message: "bad fixture value".into(),
                })
        };
        a.push(parse(0)?);
        b.push(parse(1)?);
    }
    Ok((a, b))
}

/// Engel food expenditure data: `(income, foodexp)`, 235 households.
pub fn engel() -> (Vec<f64>, Vec<f64>) {
    two_columns(ENGEL_CSV).expect("bundled Engel fixture is well formed")
}

/// Yearly sunspot numbers 1700-2007: `(year, sunspots)`, 308 values.
pub fn sunspots() -> (Vec<f64>, Vec<f64>) {
    two_columns(SUNSPOTS_CSV).expect("bundled sunspot fixture is well formed")
}

/// Raw CSV text of the Engel fixture (header `income,foodexp`).
pub fn engel_csv() -> &'static str {
    ENGEL_CSV
}

/// Raw CSV text of the sunspot fixture (header `year,sunspots`).
pub fn sunspots_csv() -> &'static str {
    SUNSPOTS_CSV
}
