use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqr_core::basis::{build_basis, QuantileGrid};
use sqr_core::objective::SqrProblem;
use sqr_core::select::{default_spar_grid, select_spar, Criterion};
use sqr_core::simulate::{simulate_qar, QarSpec};
use sqr_core::solve::Solver;
use sqr_core::spectral::{qdft_to_qper, sqdft, QSpectrum, SpectralMethod};

fn levels(lo: f64, hi: f64, step: f64) -> QuantileGrid {
    QuantileGrid::from_range(lo, hi, step).unwrap()
}

#[test]
fn at_most_four_basis_functions_are_active() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for grid in [levels(0.05, 0.95, 0.01), levels(0.1, 0.9, 0.1), levels(0.02, 0.98, 0.03)] {
        let basis = build_basis(&grid, None).unwrap();
        let (lo, hi) = basis.span();
        for _ in 0..200 {
            let (vals, _) = basis.eval(rng.gen_range(lo..=hi)).unwrap();
            assert!(vals.iter().filter(|&&v| v != 0.0).count() <= 4);
        }
        for l in 0..grid.len() {
            assert!(basis.phi().row(l).iter().filter(|&&v| v != 0.0).count() <= 4);
        }
    }
}

/// `y = a + b x + (1 + d x) u` with `u` uniform on (0, 1) has quantile
/// coefficients `(a + tau, b + d tau)`, linear in the level.
fn linear_in_level(n: usize, seed: u64) -> SqrProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.gen_range(0.0..2.0) });
    let y = DVector::from_fn(n, |i, _| 1.0 + 0.5 * x[(i, 1)] + (1.0 + 0.8 * x[(i, 1)]) * rng.gen::<f64>());
    let grid = levels(0.1, 0.9, 0.05);
    let basis = build_basis(&grid, None).unwrap();
    SqrProblem::new(x, y, grid, basis, 0.0).unwrap()
}

#[test]
fn linear_coefficients_favour_heavy_smoothing() {
    let spars = default_spar_grid();
    let median = spars[spars.len() / 2];
    for seed in 0..3 {
        let report = select_spar(&linear_in_level(200, seed), &spars, &Solver::default()).unwrap();
        let chosen = report.chosen_spar(Criterion::Bic);
        assert!(chosen >= median, "seed {seed}: chose {chosen}");
    }
}

#[test]
fn roughness_falls_along_the_spar_grid() {
    let prob = linear_in_level(120, 7);
    let report = select_spar(&prob, &default_spar_grid(), &Solver::default()).unwrap();
    let fits: Vec<_> = report
        .records
        .iter()
        .zip(&report.fits)
        .map(|(r, f)| {
            let f = f.as_ref().expect("every spar solves");
            (r.c * prob.n() as f64, f.parts, f.info.gap.unwrap().abs())
        })
        .collect();
    for w in fits.windows(2) {
        let ((c1, a, g1), (c2, b, g2)) = (w[0], w[1]);
        let slack = g1 + g2 + 1e-6 * (1.0 + a.fidelity);
        assert!(b.roughness <= a.roughness + slack / (c2 - c1), "{a:?} -> {b:?}");
    }
}

#[test]
fn a_single_candidate_is_chosen() {
    let report = select_spar(&linear_in_level(60, 3), &[0.3], &Solver::default()).unwrap();
    assert_eq!(report.chosen_spar(Criterion::Aic), 0.3);
    assert_eq!(report.chosen_spar(Criterion::Bic), 0.3);
}

fn cosine(n: usize, v: usize, shift: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|t| (2.0 * PI * v as f64 * (t as f64 + shift) / n as f64).cos() + 0.05 * rng.gen_range(-1.0..1.0))
        .collect()
}

fn spectrum(series: &[f64]) -> QSpectrum {
    sqdft(series, &levels(0.3, 0.7, 0.1), &SpectralMethod::Qr, &Solver::default()).unwrap()
}

fn median_peak(spec: &QSpectrum) -> usize {
    let median = spec.grid.levels().iter().position(|&t| (t - 0.5).abs() < 1e-12).unwrap();
    spec.freqs.index(spec.peak(median).unwrap())
}

#[test]
fn sinusoid_peak_and_time_shift() {
    let n = 64;
    let base = spectrum(&cosine(n, 9, 0.0, 1));
    assert_eq!(median_peak(&base), 9);
    for shift in [1.0, 3.5, 10.0] {
        assert_eq!(median_peak(&spectrum(&cosine(n, 9, shift, 1))), 9, "shift {shift}");
    }
}

#[test]
fn periodogram_is_the_scaled_squared_modulus() {
    let series = cosine(48, 5, 0.3, 2);
    let spec = spectrum(&series);
    let again = qdft_to_qper(&spec.qdft, series.len());
    for (a, b) in spec.qper.iter().zip(again.iter()) {
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300));
        assert!(*a >= 0.0);
    }
}

#[test]
fn spectrum_does_not_depend_on_the_thread_count() {
    let series = cosine(40, 4, 0.0, 3);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| spectrum(&series))
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one.qdft, many.qdft);
    assert_eq!(one.qper, many.qper);
}

#[test]
fn qar_paths_stay_bounded() {
    for seed in 0..100 {
        let spec = QarSpec {
            seed,
            ..QarSpec::default()
        };
        let y = simulate_qar(&spec).unwrap();
        assert_eq!(y.len(), 200);
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e3, "seed {seed}: {max}");
    }
}
