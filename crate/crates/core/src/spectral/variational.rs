//! Rayleigh-quotient upper bounds on the gap.
//!
//! For the uniform stationary law the Dirichlet form is
//! `E(f,f) = (1/2|C|) Σ_{x≠y} q(x,y) (f(y) - f(x))^2`, and every
//! non-constant `f` gives `E(f,f) / Var(f) >= gap`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::{build_generator_with_limit, Generator};
use crate::error::{Result, ZrpError};
use crate::model::{sample_uniform, space_size, transitions, Configuration, GraphSpec};

/// Variances below this count as zero.
const VARIANCE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `Σ_v η(v) cos(π v₁ / L)`, discontinuous across the wrap edge.
    WilsonPaper,
    /// `Σ_v η(v) cos(2π v₁ / L)`, periodic on the torus.
    WilsonTorus,
    Custom,
}

type Eval = dyn Fn(&Configuration) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    eval: Arc<Eval>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("kind", &self.kind).finish_non_exhaustive()
    }
}

impl TestFunction {
    pub fn custom(f: impl Fn(&Configuration) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction { kind: TestFunctionKind::Custom, eval: Arc::new(f) }
    }

    /// Linear statistic `Σ_v η(v) weight(v)`.
    pub fn linear(kind: TestFunctionKind, weights: Vec<f64>) -> Self {
        TestFunction {
            kind,
            eval: Arc::new(move |eta: &Configuration| {
                eta.occupancy().iter().zip(&weights).map(|(&k, w)| k as f64 * w).sum()
            }),
        }
    }

    /// One of the two Wilson-type functions on a torus.
    pub fn wilson(graph: &GraphSpec, kind: TestFunctionKind) -> Result<Self> {
        let l = match *graph {
            GraphSpec::Torus { l, .. } => l as f64,
            GraphSpec::Complete { .. } => {
                return Err(ZrpError::InvalidArgument("Wilson test functions need a torus".into()));
            }
        };
        let freq = match kind {
            TestFunctionKind::WilsonPaper => PI / l,
            TestFunctionKind::WilsonTorus => 2.0 * PI / l,
            TestFunctionKind::Custom => {
                return Err(ZrpError::InvalidArgument("custom is not a Wilson variant".into()));
            }
        };
        let weights = (0..graph.vertex_count()).map(|v| (freq * graph.coords(v)[0] as f64).cos()).collect();
        Ok(Self::linear(kind, weights))
    }

    pub fn eval(&self, eta: &Configuration) -> f64 {
        (self.eval)(eta)
    }
}

/// `E(f,f) / Var(f)` under the uniform law, computed exactly over the space.
pub fn rayleigh_quotient(generator: &Generator, f: &TestFunction) -> Result<f64> {
    let values: Vec<f64> = generator.configurations().iter().map(|c| f.eval(c)).collect();
    rayleigh_quotient_values(generator, &values)
}

/// Same as [`rayleigh_quotient`] for a function given by its values.
pub fn rayleigh_quotient_values(generator: &Generator, values: &[f64]) -> Result<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= VARIANCE_FLOOR * (1.0 + mean * mean) {
        return Err(ZrpError::ZeroVariance);
    }
    let mut energy = 0.0;
    for (x, &fx) in values.iter().enumerate() {
        for &(y, q) in generator.row(x) {
            energy += q * (values[y] - fx).powi(2);
        }
    }
    Ok(0.5 * energy / n / var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonBound {
    pub kind: TestFunctionKind,
    pub quotient: f64,
    /// Standard error of the quotient; zero in exact mode.
    pub std_error: f64,
    pub mode: EstimateMode,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilsonOptions {
    /// Spaces up to this size are enumerated.
    pub exact_limit: u128,
    pub samples: usize,
}

impl Default for WilsonOptions {
    fn default() -> Self {
        WilsonOptions { exact_limit: 200_000, samples: 200_000 }
    }
}

pub fn wilson_bound<R: Rng + ?Sized>(
    graph: &GraphSpec,
    r: usize,
    kind: TestFunctionKind,
    opts: WilsonOptions,
    rng: &mut R,
) -> Result<WilsonBound> {
    let f = TestFunction::wilson(graph, kind)?;
    let size = space_size(graph.vertex_count(), r).unwrap_or(u128::MAX);
    if size <= opts.exact_limit {
        let gen = build_generator_with_limit(graph, r, opts.exact_limit)?;
        let quotient = rayleigh_quotient(&gen, &f)?;
        return Ok(WilsonBound { kind, quotient, std_error: 0.0, mode: EstimateMode::Exact, samples: gen.dimension() });
    }
    monte_carlo_quotient(graph, r, &f, opts.samples, rng).map(|(q, se)| WilsonBound {
        kind,
        quotient: q,
        std_error: se,
        mode: EstimateMode::MonteCarlo,
        samples: opts.samples,
    })
}

/// Ratio estimator of `E(f,f) / Var(f)` from uniform samples, with a
/// delta-method standard error.
///
/// The numerator uses the local energy `(1/2) Σ_y q(x,y) (f(y)-f(x))^2`,
/// whose mean over uniform `x` is `E(f,f)`.
pub fn monte_carlo_quotient<R: Rng + ?Sized>(
    graph: &GraphSpec,
    r: usize,
    f: &TestFunction,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(ZrpError::InsufficientSamples("need at least two samples".into()));
    }
    let n = graph.vertex_count();
    let mut energy = Vec::with_capacity(samples);
    let mut value = Vec::with_capacity(samples);
    for _ in 0..samples {
        let eta = sample_uniform(n, r, rng);
        let fx = f.eval(&eta);
        let local: f64 = transitions(graph, &eta).into_iter().map(|(y, q)| q * (f.eval(&y) - fx).powi(2)).sum();
        energy.push(0.5 * local);
        value.push(fx);
    }
    let m = samples as f64;
    let mean_f = value.iter().sum::<f64>() / m;
    // Per-sample contributions to the numerator and the variance.
    let dev: Vec<f64> = value.iter().map(|v| (v - mean_f).powi(2)).collect();
    let a = energy.iter().sum::<f64>() / m;
    let b = dev.iter().sum::<f64>() / m;
    if b <= VARIANCE_FLOOR * (1.0 + mean_f * mean_f) {
        return Err(ZrpError::ZeroVariance);
    }
    let ratio = a / b;
    let resid_var = energy.iter().zip(&dev).map(|(e, d)| (e - ratio * d).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((ratio, (resid_var / m).sqrt() / b))
}
