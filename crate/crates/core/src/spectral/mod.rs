//! Generator of the process on its configuration space, exact gaps, TV
//! curves and variational bounds.

mod eigen;
mod generator;
mod tv;
pub mod uniformization;
mod variational;

pub use eigen::{exact_gap, exact_gap_with, spectrum, GapMethod, LanczosOptions, SolverChoice, SpectralReport, DENSE_THRESHOLD};
pub use generator::{build_generator, build_generator_with_limit, Generator};
pub use tv::{time_grid, tv_curve, tv_curve_with, tv_to_uniform, TvCurve, TvOptions, TvPoint};
pub use variational::{
    monte_carlo_quotient, rayleigh_quotient, rayleigh_quotient_values, wilson_bound, EstimateMode, TestFunction,
    TestFunctionKind, WilsonBound, WilsonOptions,
};
