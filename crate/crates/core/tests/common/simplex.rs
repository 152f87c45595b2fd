//! Dense two-phase simplex with Bland's rule, used as an exact LP oracle.
//!
//! Solves `min c'x  s.t.  A x = b, x >= 0`.

const EPS: f64 = 1e-9;

#[derive(Debug)]
pub enum SimplexError {
    Infeasible,
    Unbounded,
}

pub struct SimplexSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[col];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(pivot_row.iter()) {
                        *v -= f * pv;
                    }
                }
            }
        }
        self.basis[r] = col;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> Vec<f64> {
        (0..allowed)
            .map(|j| {
                cost[j]
                    - self
                        .rows
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &bj)| cost[bj] * row[j])
                        .sum::<f64>()
            })
            .collect()
    }

    /// Minimise `cost` over columns `< allowed`.
    fn optimise(&mut self, cost: &[f64], allowed: usize) -> Result<(), SimplexError> {
        loop {
            let rc = self.reduced_costs(cost, allowed);
            let Some(enter) = (0..allowed).find(|&j| rc[j] < -EPS && !self.basis.contains(&j)) else {
                return Ok(());
            };
            let rhs = self.width - 1;
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[enter] > EPS {
                    let ratio = row[rhs] / row[enter];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS || (ratio <= lr + EPS && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let (r, _) = leave.ok_or(SimplexError::Unbounded)?;
            self.pivot(r, enter);
        }
    }
}

/// `a` is row-major `m x d`.
pub fn solve(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<SimplexSolution, SimplexError> {
    let m = a.len();
    let d = c.len();
    let width = d + m + 1;
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width];
        for j in 0..d {
            row[j] = sign * a[i][j];
        }
        row[d + i] = 1.0;
        row[width - 1] = sign * b[i];
        rows.push(row);
    }
    let mut t = Tableau {
        rows,
        basis: (d..d + m).collect(),
        width,
    };

    let mut phase1 = vec![0.0; d + m];
    for v in phase1.iter_mut().skip(d) {
        *v = 1.0;
    }
    t.optimise(&phase1, d + m)?;
    let infeas: f64 = t
        .rows
        .iter()
        .zip(&t.basis)
        .filter(|(_, &bj)| bj >= d)
        .map(|(row, _)| row[width - 1])
        .sum();
    if infeas > 1e-7 {
        return Err(SimplexError::Infeasible);
    }
    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] >= d {
            match (0..d).find(|&j| t.rows[i][j].abs() > EPS) {
                Some(j) => {
                    t.pivot(i, j);
                    i += 1;
                }
                None => {
                    t.rows.remove(i);
                    t.basis.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }

    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    t.optimise(&phase2, d)?;
    let mut x = vec![0.0; d];
    for (row, &bj) in t.rows.iter().zip(&t.basis) {
        if bj < d {
            x[bj] = row[width - 1];
        }
    }
    let value = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok(SimplexSolution { x, value })
}
