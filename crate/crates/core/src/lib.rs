//! Exact and Monte Carlo computations around the spectral gap of the
//! constant-rate zero range process (ZRP).
//!
//! * [`model`]: graphs, configurations, ranked particles, transitions.
//! * [`spectral`]: generator, exact gaps, total-variation curves, Rayleigh quotients.
//! * [`flow`]: shortest-path multicommodity flow and the comparison certificate.
//! * [`coupling`]: the staged ranked-particle coupling on the complete graph.
//! * [`reversal`]: the two-marked-particle chain, its balance equations and time reversal.
//! * [`stats`]: occupancy statistics, Poisson/Skellam tails, random-walk estimates, tail fits.

pub mod coupling;
pub mod error;
pub mod flow;
pub mod model;
pub mod reversal;
pub mod seed;
pub mod spectral;
pub mod stats;

pub use error::{Result, ZrpError};
