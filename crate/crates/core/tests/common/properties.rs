//! Property checks shared by the property test target and the acceptance
//! runner. Each check drives a deterministic proptest runner.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use sqr_core::basis::{build_basis, QuantileGrid};
use sqr_core::objective::{objective, subgradient, SqrProblem};
use sqr_core::select::{self, spar_to_c};
use sqr_core::solve::{fit, Solver};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

fn report(result: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>) -> Result<(), String> {
    result.map_err(|e| e.to_string())
}

/// Increasing levels in (0, 1) with at least `min` entries.
fn levels_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::btree_set(2u32..99, min..=max)
        .prop_map(|s| s.into_iter().map(|v| v as f64 / 100.0).collect())
}

#[derive(Clone, Debug)]
struct Data {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn data_strategy(n_max: usize) -> impl Strategy<Value = Data> {
    (6usize..=n_max, 1usize..=2).prop_flat_map(|(n, p)| {
        (
            proptest::collection::vec(-2.0f64..2.0, n * p),
            proptest::collection::vec(-3.0f64..3.0, n),
        )
            .prop_map(move |(xv, yv)| Data {
                x: DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { xv[i * p + j] }),
                y: DVector::from_vec(yv),
            })
    })
}

fn problem(data: &Data, levels: &[f64], spar: f64) -> Result<SqrProblem, TestCaseError> {
    let grid = QuantileGrid::with_unit_weights(levels.to_vec()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let basis = build_basis(&grid, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let c = spar_to_c(&data.x, &grid, &basis, spar)
        .map_err(|e| TestCaseError::fail(e.to_string()))?
        .c;
    SqrProblem::new(data.x.clone(), data.y.clone(), grid, basis, c).map_err(|e| TestCaseError::fail(e.to_string()))
}

fn solve_value(prob: &SqrProblem) -> Result<(f64, DMatrix<f64>), TestCaseError> {
    let f = fit(prob, &Solver::default()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    Ok((f.objective_value, f.beta))
}

/// Basis rows sum to one and second-derivative rows sum to zero at every
/// level and at random points of the span.
pub fn partition_of_unity(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(levels_strategy(2, 40), 0.0f64..1.0), |(levels, u)| {
        let grid = QuantileGrid::with_unit_weights(levels).unwrap();
        let basis = build_basis(&grid, None).unwrap();
        for l in 0..grid.len() {
            prop_assert!((basis.phi().row(l).sum() - 1.0).abs() < 1e-12);
            prop_assert!(basis.phi_dd().row(l).sum().abs() < 1e-8 * basis.phi_dd().row(l).amax().max(1.0));
            prop_assert!(basis.phi().row(l).iter().all(|&v| v >= -1e-15));
        }
        let (lo, hi) = basis.span();
        let (vals, _) = basis.eval(lo + u * (hi - lo)).unwrap();
        prop_assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        Ok(())
    }))
}

/// Data lying exactly on a hyperplane is fitted with zero residuals and
/// the hyperplane coefficients at every level, for any smoothing.
pub fn linear_reproduction(cases: u32) -> Result<(), String> {
    let strat = (levels_strategy(5, 9), data_strategy(12), -1.0f64..2.0, proptest::collection::vec(-2.0f64..2.0, 2));
    report(runner(cases).run(&strat, |(levels, mut data, spar, coef)| {
        let p = data.x.ncols();
        let b = DVector::from_fn(p, |j, _| coef[j]);
        data.y = &data.x * &b;
        let prob = problem(&data, &levels, spar)?;
        let (value, beta) = solve_value(&prob)?;
        prop_assert!(value.abs() < 1e-6 * (1.0 + data.y.amax()), "objective {}", value);
        for l in 0..levels.len() {
            for j in 0..p {
                prop_assert!((beta[(l, j)] - b[j]).abs() < 1e-5, "level {} coef {}: {} vs {}", l, j, beta[(l, j)], b[j]);
            }
        }
        Ok(())
    }))
}

/// At generic points the objective is locally linear, so central
/// differences reproduce the subgradient.
pub fn subgradient_matches_differences(cases: u32) -> Result<(), String> {
    let strat = (levels_strategy(4, 8), data_strategy(10), -1.0f64..1.0, any::<u64>());
    report(runner(cases).run(&strat, |(levels, data, spar, seed)| {
        let prob = problem(&data, &levels, spar)?;
        let theta = DVector::from_fn(prob.dim(), |i, _| ((seed as f64 * 1e-9 + i as f64 * 0.7315).sin()) * 1.3);
        let g = subgradient(&prob, &theta).unwrap();
        let h = 1e-7;
        for i in 0..prob.dim() {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (objective(&prob, &up).unwrap() - objective(&prob, &dn).unwrap()) / (2.0 * h);
            let scale = g[i].abs().max(1.0);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * scale, "coord {}: fd {} vs {}", i, fd, g[i]);
        }
        Ok(())
    }))
}

/// Midpoint convexity along random segments.
pub fn convexity(cases: u32) -> Result<(), String> {
    let strat = (levels_strategy(4, 8), data_strategy(10), -1.0f64..1.0, 0.0f64..1.0, any::<u64>());
    report(runner(cases).run(&strat, |(levels, data, spar, lambda, seed)| {
        let prob = problem(&data, &levels, spar)?;
        let a = DVector::from_fn(prob.dim(), |i, _| ((seed as f64 * 1e-9 + i as f64).cos()) * 2.0);
        let b = DVector::from_fn(prob.dim(), |i, _| ((seed as f64 * 3e-9 + 0.5 * i as f64).sin()) * 2.0);
        let mid = &a * lambda + &b * (1.0 - lambda);
        let fa = objective(&prob, &a).unwrap();
        let fb = objective(&prob, &b).unwrap();
        let fm = objective(&prob, &mid).unwrap();
        prop_assert!(fm <= lambda * fa + (1.0 - lambda) * fb + 1e-9 * (1.0 + fa.abs() + fb.abs()));
        Ok(())
    }))
}

/// Scaling `y` by `s > 0` scales the optimal value and coefficients by `s`;
/// adding `X g` to `y` shifts the coefficients by `g`.
pub fn scaling_equivariance(cases: u32) -> Result<(), String> {
    let strat = (levels_strategy(4, 7), data_strategy(10), -1.0f64..1.0, 0.1f64..10.0, proptest::collection::vec(-1.0f64..1.0, 2));
    report(runner(cases).run(&strat, |(levels, data, spar, s, shift)| {
        let prob = problem(&data, &levels, spar)?;
        let (v0, _) = solve_value(&prob)?;
        let scaled = SqrProblem::new(data.x.clone(), &data.y * s, prob.grid().clone(), prob.basis().clone(), prob.c())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (v1, _) = solve_value(&scaled)?;
        prop_assert!((v1 - s * v0).abs() <= 1e-6 * (1.0 + (s * v0).abs()), "{} vs {}", v1, s * v0);

        let g = DVector::from_fn(data.x.ncols(), |j, _| shift[j]);
        let moved = SqrProblem::new(data.x.clone(), &data.y + &data.x * &g, prob.grid().clone(), prob.basis().clone(), prob.c())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (v2, _) = solve_value(&moved)?;
        prop_assert!((v2 - v0).abs() <= 1e-6 * (1.0 + v0.abs()), "{} vs {}", v2, v0);
        Ok(())
    }))
}

/// Reordering observations leaves the optimal value unchanged.
pub fn permutation_invariance(cases: u32) -> Result<(), String> {
    let strat = (levels_strategy(4, 7), data_strategy(10), -1.0f64..1.0, any::<u64>());
    report(runner(cases).run(&strat, |(levels, data, spar, seed)| {
        let prob = problem(&data, &levels, spar)?;
        let (v0, _) = solve_value(&prob)?;
        let n = data.y.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let x = DMatrix::from_fn(n, data.x.ncols(), |i, j| data.x[(order[i], j)]);
        let y = DVector::from_fn(n, |i, _| data.y[order[i]]);
        let permuted = SqrProblem::new(x, y, prob.grid().clone(), prob.basis().clone(), prob.c())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (v1, _) = solve_value(&permuted)?;
        prop_assert!((v1 - v0).abs() <= 1e-6 * (1.0 + v0.abs()), "{} vs {}", v1, v0);
        Ok(())
    }))
}

/// Smoothing selection gives bit-identical records on 1 and 3 worker threads.
pub fn parallel_determinism(cases: u32) -> Result<(), String> {
    let strat = (levels_strategy(5, 9), data_strategy(14));
    report(runner(cases).run(&strat, |(levels, data)| {
        let prob = problem(&data, &levels, 0.0)?;
        let spars = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| select::select_spar(&prob, &spars, &Solver::default()))
        };
        let one = run(1).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let three = run(3).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&one.records, &three.records);
        prop_assert_eq!(one.chosen_aic, three.chosen_aic);
        prop_assert_eq!(one.chosen_bic, three.chosen_bic);
        for (a, b) in one.fits.iter().zip(&three.fits) {
            prop_assert_eq!(a.as_ref().map(|f| &f.theta), b.as_ref().map(|f| &f.theta));
        }
        Ok(())
    }))
}

pub type Property = fn(u32) -> Result<(), String>;

pub const ALL: [(&str, Property); 7] = [
    ("partition of unity", partition_of_unity),
    ("linear reproduction", linear_reproduction),
    ("subgradient vs finite differences", subgradient_matches_differences),
    ("convexity", convexity),
    ("scaling equivariance", scaling_equivariance),
    ("permutation invariance", permutation_invariance),
    ("parallel determinism", parallel_determinism),
];
