//! Total-variation distance to the uniform law along the exact transient.

use serde::{Deserialize, Serialize};

use super::generator::Generator;
use super::uniformization::{evolve, DEFAULT_TERM_BUDGET, DEFAULT_TRUNCATION};
use crate::error::{Result, ZrpError};
use crate::model::Configuration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvPoint {
    pub time: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvCurve {
    pub start: Configuration,
    pub points: Vec<TvPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvOptions {
    pub truncation: f64,
    pub term_budget: usize,
}

impl Default for TvOptions {
    fn default() -> Self {
        TvOptions { truncation: DEFAULT_TRUNCATION, term_budget: DEFAULT_TERM_BUDGET }
    }
}

/// Half the L1 distance between `p` and the uniform law.
pub fn tv_to_uniform(p: &[f64]) -> f64 {
    let u = 1.0 / p.len() as f64;
    0.5 * p.iter().map(|x| (x - u).abs()).sum::<f64>()
}

pub fn tv_curve(generator: &Generator, start: &Configuration, times: &[f64]) -> Result<TvCurve> {
    tv_curve_with(generator, start, times, TvOptions::default())
}

/// Evaluates the curve at `times`. Consecutive non-decreasing times are
/// evolved incrementally from the previous law.
pub fn tv_curve_with(generator: &Generator, start: &Configuration, times: &[f64], opts: TvOptions) -> Result<TvCurve> {
    let x0 = generator.index_of(start)?;
    let mut p0 = vec![0.0; generator.dimension()];
    p0[x0] = 1.0;
    let mut points = Vec::with_capacity(times.len());
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &t in times {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(ZrpError::InvalidArgument(format!("times must be finite and non-negative, got {t}")));
        }
        let p = match prev.take() {
            Some((s, p)) if s <= t => evolve(generator.rate_rows(), &p, t - s, opts.truncation, opts.term_budget)?,
            _ => evolve(generator.rate_rows(), &p0, t, opts.truncation, opts.term_budget)?,
        };
        points.push(TvPoint { time: t, tv: tv_to_uniform(&p) });
        prev = Some((t, p));
    }
    Ok(TvCurve { start: start.clone(), points })
}

impl TvCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,tv\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.time, p.tv));
        }
        s
    }

    /// Least-squares slope of `-ln TV` against time over points with
    /// `t_min <= t <= t_max`; estimates the exponential decay rate.
    pub fn decay_rate(&self, t_min: f64, t_max: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.time >= t_min && p.time <= t_max && p.tv > 0.0)
            .map(|p| (p.time, -p.tv.ln()))
            .collect();
        if pts.len() < 2 {
            return Err(ZrpError::InsufficientSamples(format!("{} positive points in [{t_min}, {t_max}]", pts.len())));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(ZrpError::ZeroVariance);
        }
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        Ok(sxy / sxx)
    }

    /// True if no point exceeds its predecessor by more than `slack`.
    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].time < w[0].time || w[1].tv <= w[0].tv + slack)
    }
}

/// Evenly spaced times `0, dt, 2 dt, ..., t_max`.
pub fn time_grid(t_max: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| t_max * k as f64 / steps as f64).collect()
}
