#![allow(dead_code)]

pub mod properties;
pub mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqr_core::basis::{build_basis, QuantileGrid};
use sqr_core::objective::SqrProblem;
use sqr_core::select::spar_to_c;

/// Tiny random instance: `n <= 10`, `p <= 2`, `L <= 4`, `K <= 5`,
/// spar in {-1, 0, 1}.
pub struct TinyInstance {
    pub problem: SqrProblem,
    pub spar: f64,
}

pub fn tiny_instance(seed: u64) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=10);
    let p = rng.gen_range(1..=2);
    let l = rng.gen_range(2..=4);
    let mut levels: Vec<f64> = Vec::new();
    while levels.len() < l {
        let t = (rng.gen_range(5..=95) as f64) / 100.0;
        if !levels.contains(&t) {
            levels.push(t);
        }
    }
    levels.sort_by(f64::total_cmp);
    let weights: Vec<f64> = (0..l).map(|_| rng.gen_range(0.5..1.5)).collect();
    let grid = QuantileGrid::new(levels, weights).unwrap();
    let nknots = rng.gen_range(2..=l.min(3));
    let basis = build_basis(&grid, Some(nknots)).unwrap();
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let spar = [-1.0, 0.0, 1.0][rng.gen_range(0..3)];
    let c = spar_to_c(&x, &grid, &basis, spar).unwrap().c;
    TinyInstance {
        problem: SqrProblem::new(x, y, grid, basis, c).unwrap(),
        spar,
    }
}

/// The primal LP in nonnegative variables
/// `[gamma, delta, (u_l, v_l, r_l, s_l) for each level]`:
/// `X Phi_l (gamma - delta) + u_l - v_l = y`,
/// `Phidd_l (gamma - delta) - r_l + s_l = 0`,
/// cost `tau_l 1'u_l + (1 - tau_l) 1'v_l + c_l (1'r_l + 1's_l)`.
/// Keeping `c_l` out of the constraint rows avoids pivots of size `c_l`.
pub fn canonical_form(prob: &SqrProblem) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (n, p, k, l) = (prob.n(), prob.p(), prob.k(), prob.l());
    let pk = p * k;
    let d = 2 * pk + l * (2 * n + 2 * p);
    let m = n * l + p * l;
    let mut a = vec![vec![0.0; d]; m];
    let mut b = vec![0.0; m];
    let mut c = vec![0.0; d];
    let phi = prob.basis().phi();
    let phi_dd = prob.basis().phi_dd();
    for lev in 0..l {
        let tau = prob.grid().levels()[lev];
        let block = 2 * pk + lev * (2 * n + 2 * p);
        for t in 0..n {
            let row = lev * n + t;
            for j in 0..p {
                for q in 0..k {
                    let v = prob.x()[(t, j)] * phi[(lev, q)];
                    a[row][j * k + q] = v;
                    a[row][pk + j * k + q] = -v;
                }
            }
            a[row][block + t] = 1.0;
            a[row][block + n + t] = -1.0;
            b[row] = prob.y()[t];
            c[block + t] = tau;
            c[block + n + t] = 1.0 - tau;
        }
        let cl = prob.c_levels()[lev];
        for j in 0..p {
            let row = n * l + lev * p + j;
            for q in 0..k {
                let v = phi_dd[(lev, q)];
                a[row][j * k + q] = v;
                a[row][pk + j * k + q] = -v;
            }
            a[row][block + 2 * n + j] = -1.0;
            a[row][block + 2 * n + p + j] = 1.0;
            c[block + 2 * n + j] = cl;
            c[block + 2 * n + p + j] = cl;
        }
    }
    (a, b, c)
}

/// Brute-force order-statistic bracket for the tau-quantile minimiser of
/// `sum rho_tau(y - q)`: any point between the order statistics at ranks
/// `ceil(n tau)` and `floor(n tau) + 1` (1-based, clamped).
pub fn quantile_bracket(y: &[f64], tau: f64) -> (f64, f64) {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let raw = n as f64 * tau;
    let nt = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw };
    let lo = (nt.ceil() as usize).clamp(1, n);
    let hi = ((nt.floor() as usize) + 1).clamp(1, n);
    (s[lo.min(hi) - 1], s[lo.max(hi) - 1])
}
