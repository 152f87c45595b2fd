//! Spline quantile regression (SQR): quantile-regression coefficients fitted
//! jointly across a grid of quantile levels as cubic splines in the level,
//! with an L1 penalty on their second derivatives.
//!
//! The exact solution comes from a primal-dual interior-point method on the
//! canonical LP ([`lp`], [`ip`]). Approximate solutions come from BFGS,
//! ADAM and GRAD applied directly to the nonsmooth objective ([`grad`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bench;
pub mod data;
pub mod error;
pub mod grad;
pub mod io;
pub mod ip;
pub mod lp;
pub mod objective;
pub mod select;
pub mod simulate;
pub mod solve;
pub mod spectral;

pub use basis::{build_basis, QuantileGrid, SplineBasis};
pub use error::{Result, SqrError};
pub use grad::{GradAlgorithm, GradConfig, LsOption};
pub use ip::{IpConfig, IpSolution, IpStatus};
pub use lp::CanonicalLp;
pub use objective::{objective, subgradient, SqrFit, SqrProblem};
pub use select::{select_spar, Criterion};
pub use solve::{fit, Solver};
pub use spectral::{sqdft, QSpectrum, SpectralMethod};
