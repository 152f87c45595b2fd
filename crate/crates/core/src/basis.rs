//! Quantile grids and cubic B-spline bases over the quantile level.
//!
//! A [`SplineBasis`] holds the basis values `phi_k(tau_l)` and second
//! derivatives on every grid level, plus the knot vector needed to evaluate
//! the same functions at arbitrary levels inside the knot span.

use nalgebra::DMatrix;

use crate::error::{Result, SqrError};

/// Order (degree + 1) of the cubic B-splines used throughout.
pub const CUBIC_ORDER: usize = 4;

/// Increasing quantile levels with one nonnegative penalty weight per level.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<f64>,
    weights: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(SqrError::InvalidGrid("no quantile levels".into()));
        }
        if weights.len() != levels.len() {
            return Err(SqrError::InvalidGrid(format!(
                "{} weights for {} levels",
                weights.len(),
                levels.len()
            )));
        }
        if let Some(&bad) = levels.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(SqrError::InvalidGrid(format!("level {bad} not in (0, 1)")));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SqrError::InvalidGrid("levels must be strictly increasing".into()));
        }
        if let Some(&bad) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(SqrError::InvalidGrid(format!("weight {bad} is negative or non-finite")));
        }
        Ok(Self { levels, weights })
    }

    /// Grid with every penalty weight equal to one.
    pub fn with_unit_weights(levels: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; levels.len()];
        Self::new(levels, weights)
    }

    /// `start, start + step, ...` up to and including `stop` (within half a step).
    ///
    /// Levels are rounded to 10 decimals so that e.g. `0.05..0.95 by 0.01`
    /// yields the exact decimal values.
    pub fn from_range(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(stop >= start) {
            return Err(SqrError::InvalidGrid(format!(
                "bad range start={start} stop={stop} step={step}"
            )));
        }
        let count = ((stop - start) / step + 0.5).floor() as usize + 1;
        let levels = (0..count)
            .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
            .collect();
        Self::with_unit_weights(levels)
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::with_unit_weights(vec![tau])
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.levels[0]
    }

    pub fn max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }
}

/// Spline basis evaluated on a quantile grid.
#[derive(Clone, Debug)]
pub struct SplineBasis {
    knots: Vec<f64>,
    order: usize,
    phi: DMatrix<f64>,
    phi_dd: DMatrix<f64>,
    first_nonzero: Vec<usize>,
}

/// Nonzero window of one basis row: columns `first..first + order`.
#[derive(Clone, Copy, Debug)]
pub struct LocalRow {
    pub first: usize,
    pub values: [f64; CUBIC_ORDER],
    pub second: [f64; CUBIC_ORDER],
}

/// Default number of interior knots for a grid of `levels` points.
pub fn default_interior_knots(levels: usize) -> usize {
    let rule = (levels as f64).sqrt().round() as usize + 2;
    rule.min(levels.saturating_sub(2))
}

/// Build the cubic B-spline basis for `grid`.
///
/// `nknots` counts all distinct knots including the two boundary knots, so
/// the basis has `nknots + 2` functions. Interior knots sit at evenly spaced
/// order statistics of the grid levels.
pub fn build_basis(grid: &QuantileGrid, nknots: Option<usize>) -> Result<SplineBasis> {
    let l = grid.len();
    if l < 2 {
        return Err(SqrError::InvalidGrid(format!(
            "a cubic basis needs at least 2 levels, got {l}"
        )));
    }
    let interior = match nknots {
        Some(total) if total < 2 || total > l => {
            return Err(SqrError::InvalidKnotCount {
                requested: total,
                max: l,
            })
        }
        Some(total) => total - 2,
        None => default_interior_knots(l),
    };
    let levels = grid.levels();
    let (lo, hi) = (grid.min(), grid.max());
    let mut knots = Vec::with_capacity(interior + 2 * CUBIC_ORDER);
    knots.extend(std::iter::repeat_n(lo, CUBIC_ORDER));
    let spacing = (l - 1) as f64 / (interior + 1) as f64;
    for i in 1..=interior {
        let idx = (i as f64 * spacing).round() as usize;
        knots.push(levels[idx]);
    }
    knots.extend(std::iter::repeat_n(hi, CUBIC_ORDER));
    SplineBasis::from_knots(knots, CUBIC_ORDER, levels)
}

impl SplineBasis {
    /// Single constant basis function on the grid: `K = 1`, zero curvature.
    ///
    /// With this basis an SQR problem reduces to ordinary quantile regression
    /// at each level, which is how independent QR fits are computed.
    pub fn constant(grid: &QuantileGrid) -> SplineBasis {
        let l = grid.len();
        SplineBasis {
            knots: vec![grid.min(), grid.max()],
            order: 1,
            phi: DMatrix::from_element(l, 1, 1.0),
            phi_dd: DMatrix::zeros(l, 1),
            first_nonzero: vec![0; l],
        }
    }

    fn from_knots(knots: Vec<f64>, order: usize, levels: &[f64]) -> Result<SplineBasis> {
        let k = knots.len() - order;
        let l = levels.len();
        let mut basis = SplineBasis {
            knots,
            order,
            phi: DMatrix::zeros(l, k),
            phi_dd: DMatrix::zeros(l, k),
            first_nonzero: vec![0; l],
        };
        for (row, &tau) in levels.iter().enumerate() {
            let local = basis.local(tau)?;
            basis.first_nonzero[row] = local.first;
            for j in 0..order {
                basis.phi[(row, local.first + j)] = local.values[j];
                basis.phi_dd[(row, local.first + j)] = local.second[j];
            }
        }
        Ok(basis)
    }

    pub fn n_basis(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_levels(&self) -> usize {
        self.phi.nrows()
    }

    /// Width of the nonzero window in each row (4 for cubic, 1 for constant).
    pub fn support_width(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `L x K` matrix of basis values on the grid.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `L x K` matrix of basis second derivatives on the grid.
    pub fn phi_dd(&self) -> &DMatrix<f64> {
        &self.phi_dd
    }

    /// First column of the nonzero window of grid row `level`.
    pub fn first_nonzero(&self, level: usize) -> usize {
        self.first_nonzero[level]
    }

    pub fn span(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Basis values and second derivatives at `tau` as full rows of length `K`.
    pub fn eval(&self, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let local = self.local(tau)?;
        let k = self.n_basis();
        let mut values = vec![0.0; k];
        let mut second = vec![0.0; k];
        for j in 0..self.order {
            values[local.first + j] = local.values[j];
            second[local.first + j] = local.second[j];
        }
        Ok((values, second))
    }

    /// Nonzero window of the basis at `tau`.
    pub fn local(&self, tau: f64) -> Result<LocalRow> {
        let (lo, hi) = self.span();
        if !(tau >= lo && tau <= hi) {
            return Err(SqrError::OutOfSpan { tau, lo, hi });
        }
        let mut row = LocalRow {
            first: 0,
            values: [0.0; CUBIC_ORDER],
            second: [0.0; CUBIC_ORDER],
        };
        if self.order == 1 {
            row.values[0] = 1.0;
            return Ok(row);
        }
        let span = self.find_span(tau);
        let ders = derivative_basis(span, tau, &self.knots);
        row.first = span + 1 - CUBIC_ORDER;
        row.values = ders[0];
        row.second = ders[2];
        Ok(row)
    }

    // Right-continuous span lookup; the right boundary belongs to the last span.
    fn find_span(&self, tau: f64) -> usize {
        let p = self.order - 1;
        let k = self.n_basis();
        if tau >= self.knots[k] {
            return k - 1;
        }
        let (mut low, mut high) = (p, k);
        while high - low > 1 {
            let mid = (low + high) / 2;
            if tau < self.knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        low
    }
}

/// Cubic basis values and their first two derivatives on knot span `span`
/// via the triangular Cox-de Boor table.
fn derivative_basis(span: usize, u: f64, knots: &[f64]) -> [[f64; CUBIC_ORDER]; 3] {
    const P: usize = CUBIC_ORDER - 1;
    const NDERS: usize = 2;
    let mut ndu = [[0.0f64; CUBIC_ORDER]; CUBIC_ORDER];
    let mut left = [0.0f64; CUBIC_ORDER];
    let mut right = [0.0f64; CUBIC_ORDER];
    ndu[0][0] = 1.0;
    for j in 1..=P {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = [[0.0f64; CUBIC_ORDER]; NDERS + 1];
    for j in 0..=P {
        ders[0][j] = ndu[j][P];
    }
    let mut a = [[0.0f64; CUBIC_ORDER]; 2];
    for r in 0..=P {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=NDERS {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = P - k;
            if r >= k {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { P - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = P as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= factor;
        }
        factor *= (P - k) as f64;
    }
    ders
}

#[cfg(test)]
mod tests {
    use super::*;

    // Textbook recursive Cox-de Boor, kept separate from the table evaluator.
    fn cox_de_boor(i: usize, order: usize, t: f64, knots: &[f64]) -> f64 {
        if order == 1 {
            let last = knots[knots.len() - 1];
            let inside = knots[i] <= t && t < knots[i + 1];
            let right_end = t == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            return if inside || right_end { 1.0 } else { 0.0 };
        }
        let mut value = 0.0;
        let d1 = knots[i + order - 1] - knots[i];
        if d1 > 0.0 {
            value += (t - knots[i]) / d1 * cox_de_boor(i, order - 1, t, knots);
        }
        let d2 = knots[i + order] - knots[i + 1];
        if d2 > 0.0 {
            value += (knots[i + order] - t) / d2 * cox_de_boor(i + 1, order - 1, t, knots);
        }
        value
    }

    fn fine_grid() -> QuantileGrid {
        QuantileGrid::from_range(0.05, 0.95, 0.01).unwrap()
    }

    #[test]
    fn grid_from_range_is_exact() {
        let g = fine_grid();
        assert_eq!(g.len(), 91);
        assert_eq!(g.levels()[0], 0.05);
        assert_eq!(g.levels()[45], 0.5);
        assert_eq!(g.max(), 0.95);
    }

    #[test]
    fn grid_rejects_bad_levels() {
        assert!(QuantileGrid::with_unit_weights(vec![0.5, 0.4]).is_err());
        assert!(QuantileGrid::with_unit_weights(vec![0.0, 0.4]).is_err());
        assert!(QuantileGrid::with_unit_weights(vec![0.2, 1.0]).is_err());
        assert!(QuantileGrid::new(vec![0.2, 0.4], vec![1.0]).is_err());
        assert!(QuantileGrid::new(vec![0.2, 0.4], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn default_basis_is_partition_of_unity() {
        let b = build_basis(&fine_grid(), None).unwrap();
        assert_eq!(b.n_basis(), default_interior_knots(91) + 4);
        for row in 0..b.n_levels() {
            let s: f64 = b.phi().row(row).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let sd: f64 = b.phi_dd().row(row).sum();
            assert!(sd.abs() < 1e-9, "row {row} second-derivative sum {sd}");
            assert!(b.phi().row(row).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn boundary_only_knots_give_four_functions() {
        let g = QuantileGrid::with_unit_weights(vec![0.25, 0.5, 0.75]).unwrap();
        let b = build_basis(&g, Some(2)).unwrap();
        assert_eq!(b.n_basis(), 4);
        assert_eq!(b.phi().shape(), (3, 4));
    }

    #[test]
    fn knot_count_errors() {
        let g = QuantileGrid::with_unit_weights(vec![0.25, 0.5, 0.75]).unwrap();
        assert!(matches!(
            build_basis(&g, Some(4)),
            Err(SqrError::InvalidKnotCount { requested: 4, max: 3 })
        ));
        assert!(matches!(
            build_basis(&g, Some(1)),
            Err(SqrError::InvalidKnotCount { .. })
        ));
        let single = QuantileGrid::single(0.5).unwrap();
        assert!(matches!(build_basis(&single, None), Err(SqrError::InvalidGrid(_))));
    }

    #[test]
    fn matches_recursive_evaluator() {
        let b = build_basis(&fine_grid(), None).unwrap();
        for &tau in &[0.05, 0.137, 0.5, 0.77, 0.95] {
            let (values, _) = b.eval(tau).unwrap();
            for (i, v) in values.iter().enumerate() {
                let expected = cox_de_boor(i, 4, tau, b.knots());
                assert!((v - expected).abs() < 1e-13, "tau {tau} k {i}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn eval_agrees_with_grid_rows() {
        let g = fine_grid();
        let b = build_basis(&g, None).unwrap();
        for (row, &tau) in g.levels().iter().enumerate() {
            let (values, second) = b.eval(tau).unwrap();
            for k in 0..b.n_basis() {
                assert_eq!(values[k], b.phi()[(row, k)]);
                assert_eq!(second[k], b.phi_dd()[(row, k)]);
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let b = build_basis(&fine_grid(), Some(8)).unwrap();
        let h = 1e-4;
        for &tau in &[0.123, 0.37, 0.61, 0.888] {
            let (_, dd) = b.eval(tau).unwrap();
            let (up, _) = b.eval(tau + h).unwrap();
            let (mid, _) = b.eval(tau).unwrap();
            let (down, _) = b.eval(tau - h).unwrap();
            let scale = dd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..b.n_basis() {
                let fd = (up[k] - 2.0 * mid[k] + down[k]) / (h * h);
                assert!(
                    (fd - dd[k]).abs() <= 1e-4 * scale,
                    "tau {tau} k {k}: fd {fd} analytic {}",
                    dd[k]
                );
            }
        }
    }

    #[test]
    fn out_of_span_is_rejected() {
        let b = build_basis(&fine_grid(), None).unwrap();
        assert!(matches!(b.eval(0.01), Err(SqrError::OutOfSpan { .. })));
        assert!(matches!(b.eval(0.99), Err(SqrError::OutOfSpan { .. })));
        assert!(b.eval(0.95).is_ok());
    }

    #[test]
    fn constant_basis_has_no_curvature() {
        let g = QuantileGrid::single(0.3).unwrap();
        let b = SplineBasis::constant(&g);
        assert_eq!(b.n_basis(), 1);
        assert_eq!(b.phi()[(0, 0)], 1.0);
        assert_eq!(b.phi_dd()[(0, 0)], 0.0);
    }
}
