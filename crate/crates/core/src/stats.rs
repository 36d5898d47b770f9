//! Occupancy statistics on the complete graph, Poisson and Skellam tails,
//! random-walk return probabilities and exponential tail fits.

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{draw_event, EventDraw};
use crate::error::{Result, ZrpError};
use crate::model::{sample_uniform, Configuration};
use crate::seed::replica_rng;

// ---------------------------------------------------------------------------
// Occupancy

/// Windowed empty times: for window `k` of length `window`, the empty time
/// of each vertex inside the window capped at `cap`, averaged over vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedOccupancy {
    pub window: f64,
    pub cap: f64,
    pub averages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    pub n: usize,
    pub r: usize,
    pub horizon: f64,
    /// Total empty time of each vertex over `[0, horizon)`.
    pub empty_time: Vec<f64>,
    /// Average of `empty_time` over vertices.
    pub mean_empty_time: f64,
    pub events: u64,
    pub windows: Option<WindowedOccupancy>,
}

impl OccupancyTrace {
    pub fn empty_fraction(&self) -> f64 {
        self.mean_empty_time / self.horizon
    }
}

/// Window length and cap for the windowed view, usually `((ρ+1)^2, M(ρ+1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub window: f64,
    pub cap: f64,
}

impl WindowSpec {
    pub fn for_density(rho: f64, m_param: f64) -> Self {
        WindowSpec { window: (rho + 1.0).powi(2), cap: m_param * (rho + 1.0) }
    }
}

/// Accumulates empty time per vertex from a stream of uniformized events on
/// the complete graph (ring at an empty vertex = failed attempt).
pub fn occupancy_from_draws<I: IntoIterator<Item = EventDraw>>(
    eta0: &Configuration,
    draws: I,
    horizon: f64,
    windows: Option<WindowSpec>,
) -> OccupancyTrace {
    let n = eta0.vertex_count();
    let mut occ: Vec<u32> = eta0.occupancy().to_vec();
    let mut empty_since: Vec<Option<f64>> = occ.iter().map(|&k| (k == 0).then_some(0.0)).collect();
    let mut empty_time = vec![0.0; n];
    let n_windows = windows.map_or(0, |w| (horizon / w.window).ceil() as usize);
    let mut per_window = vec![vec![0.0; n]; n_windows];
    let mut close = |v: usize, start: f64, end: f64, empty_time: &mut Vec<f64>| {
        empty_time[v] += end - start;
        if let Some(w) = windows {
            let mut k = (start / w.window) as usize;
            while k < n_windows {
                let lo = start.max(k as f64 * w.window);
                let hi = end.min((k + 1) as f64 * w.window);
                if hi <= lo {
                    break;
                }
                per_window[k][v] += hi - lo;
                k += 1;
            }
        }
    };
    let mut clock = 0.0;
    let mut events = 0;
    for d in draws {
        if clock + d.dt >= horizon {
            break;
        }
        clock += d.dt;
        events += 1;
        if occ[d.ring] == 0 {
            continue;
        }
        occ[d.ring] -= 1;
        if occ[d.ring] == 0 {
            empty_since[d.ring] = Some(clock);
        }
        if occ[d.dest] == 0 {
            let start = empty_since[d.dest].take().expect("empty vertex has a start time");
            close(d.dest, start, clock, &mut empty_time);
        }
        occ[d.dest] += 1;
    }
    for (v, since) in empty_since.iter().enumerate() {
        if let Some(start) = *since {
            close(v, start, horizon, &mut empty_time);
        }
    }
    let mean_empty_time = empty_time.iter().sum::<f64>() / n as f64;
    let windows = windows.map(|w| WindowedOccupancy {
        window: w.window,
        cap: w.cap,
        averages: per_window.iter().map(|row| row.iter().map(|z| z.min(w.cap)).sum::<f64>() / n as f64).collect(),
    });
    OccupancyTrace { n, r: eta0.particles(), horizon, empty_time, mean_empty_time, events, windows }
}

/// Simulates the process on the complete graph from `eta0` up to `horizon`.
pub fn occupancy_stats<R: Rng + ?Sized>(eta0: &Configuration, horizon: f64, windows: Option<WindowSpec>, rng: &mut R) -> Result<OccupancyTrace> {
    let n = eta0.vertex_count();
    if n < 2 {
        return Err(ZrpError::InvalidArgument("need at least 2 vertices".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ZrpError::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let draws = std::iter::repeat_with(|| draw_event(n, rng));
    Ok(occupancy_from_draws(eta0, draws, horizon, windows))
}

/// Pooled empty fraction from independent replicas, each started from a
/// uniform configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledOccupancy {
    pub n: usize,
    pub r: usize,
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    pub fraction: f64,
    pub std_error: f64,
    pub exact: f64,
}

pub fn pooled_empty_fraction(n: usize, r: usize, horizon: f64, replicas: usize, seed: u64) -> Result<PooledOccupancy> {
    if replicas < 2 {
        return Err(ZrpError::InsufficientSamples("need at least two replicas".into()));
    }
    let fractions: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            let eta0 = sample_uniform(n, r, &mut rng);
            occupancy_stats(&eta0, horizon, None, &mut rng).map(|t| t.empty_fraction())
        })
        .collect::<Result<_>>()?;
    let (mean, se) = mean_and_se(&fractions);
    let exact = empty_probability_exact(n, r)?;
    Ok(PooledOccupancy { n, r, horizon, replicas, seed, fraction: mean, std_error: se, exact: ratio_to_f64(&exact) })
}

/// Stationary probability that a given vertex is empty: `(n-1)/(n+r-1)`.
pub fn empty_probability_exact(n: usize, r: usize) -> Result<BigRational> {
    if n < 2 {
        return Err(ZrpError::InvalidArgument("need at least 2 vertices".into()));
    }
    Ok(BigRational::new(BigInt::from(n - 1), BigInt::from(n + r - 1)))
}

fn ratio_to_f64(q: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    q.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

/// Estimates of `E(Z ∧ M(ρ+1)) / (ρ+1)` where `Z` is the empty time of a
/// vertex during `[0, (ρ+1)^2)`, started with `⌊2(ρ+1)⌋` particles there
/// (or all of them, if fewer) and the rest placed uniformly elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmptyTimeConstant {
    pub m_param: f64,
    pub replicas: usize,
    /// `(n, ρ, estimate, standard error)` per grid point.
    pub table: Vec<(usize, f64, f64, f64)>,
    /// Smallest estimate over the grid.
    pub c_hat: f64,
}

pub fn estimate_empty_time_constant(grid: &[(usize, usize)], m_param: f64, replicas: usize, seed: u64) -> Result<EmptyTimeConstant> {
    if grid.is_empty() || replicas < 2 {
        return Err(ZrpError::InsufficientSamples("need a nonempty grid and at least two replicas".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    for (g, &(n, r)) in grid.iter().enumerate() {
        if n < 2 {
            return Err(ZrpError::InvalidArgument("need at least 2 vertices".into()));
        }
        let rho = r as f64 / n as f64;
        let scale = rho + 1.0;
        let on_v = ((2.0 * scale).floor() as usize).min(r);
        let cap = m_param * scale;
        let values: Vec<f64> = (0..replicas as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(seed ^ (g as u64).wrapping_mul(0x9E37_79B9), i);
                let rest = sample_uniform(n - 1, r - on_v, &mut rng);
                let mut occ = vec![on_v as u32];
                occ.extend_from_slice(rest.occupancy());
                let trace = occupancy_stats(&Configuration::new(occ), scale * scale, None, &mut rng)?;
                Ok(trace.empty_time[0].min(cap) / scale)
            })
            .collect::<Result<_>>()?;
        let (mean, se) = mean_and_se(&values);
        table.push((n, rho, mean, se));
    }
    let c_hat = table.iter().map(|t| t.2).fold(f64::INFINITY, f64::min);
    Ok(EmptyTimeConstant { m_param, replicas, table, c_hat })
}

// ---------------------------------------------------------------------------
// Poisson and Skellam

/// Terms beyond this many standard deviations carry less than 1e-17 mass.
const POISSON_SPREAD: f64 = 40.0;
/// Upper limit on the number of pmf terms.
pub const POISSON_TERM_BUDGET: usize = 10_000_000;

/// Poisson(λ) pmf on `0..=kmax`, computed in log space, with `kmax` chosen
/// so the neglected upper tail is below 1e-17.
fn poisson_pmf(lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ZrpError::InvalidArgument(format!("λ must be positive, got {lambda}")));
    }
    let kmax = (lambda + POISSON_SPREAD * lambda.sqrt() + POISSON_SPREAD).ceil() as usize;
    if kmax > POISSON_TERM_BUDGET {
        return Err(ZrpError::TruncationBudget { budget: POISSON_TERM_BUDGET });
    }
    let ln_l = lambda.ln();
    let mut log_p = -lambda;
    let mut pmf = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        if k > 0 {
            log_p += ln_l - (k as f64).ln();
        }
        pmf.push(log_p.exp());
    }
    Ok(pmf)
}

/// `S[k] = P(X >= k)`, summed from the top so small tails keep precision.
fn upper_tails(pmf: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; pmf.len() + 1];
    for k in (0..pmf.len()).rev() {
        s[k] = s[k + 1] + pmf[k];
    }
    s
}

/// `P(X - Y >= m)` for independent `X, Y ~ Poisson(λ)`.
pub fn skellam_tail(lambda: f64, m: i64) -> Result<f64> {
    let pmf = poisson_pmf(lambda)?;
    let tails = upper_tails(&pmf);
    let mut total = 0.0;
    for (y, &py) in pmf.iter().enumerate() {
        let need = m + y as i64;
        let sx = if need <= 0 {
            1.0
        } else if need as usize >= tails.len() {
            0.0
        } else {
            tails[need as usize]
        };
        total += py * sx;
    }
    Ok(total.min(1.0))
}

/// `P(X - Y = m)`.
pub fn skellam_pmf(lambda: f64, m: i64) -> Result<f64> {
    let pmf = poisson_pmf(lambda)?;
    Ok(pmf
        .iter()
        .enumerate()
        .filter_map(|(y, &py)| {
            let x = m + y as i64;
            (x >= 0 && (x as usize) < pmf.len()).then(|| py * pmf[x as usize])
        })
        .sum())
}

/// `P(|X - λ| >= λ/2)` for `X ~ Poisson(λ)`.
pub fn poisson_concentration(lambda: f64) -> Result<f64> {
    let pmf = poisson_pmf(lambda)?;
    let lo = (lambda / 2.0).floor();
    let hi = (1.5 * lambda).ceil();
    Ok(pmf.iter().enumerate().filter(|&(k, _)| (k as f64) <= lo || (k as f64) >= hi).map(|(_, p)| p).sum())
}

/// Smallest integer `m` with `m >= αλ`, robust to rounding in `αλ`.
pub fn threshold(alpha: f64, lambda: f64) -> i64 {
    (alpha * lambda - 1e-9).ceil() as i64
}

/// `-ln P(X - Y >= αλ) / (α^2 λ)`.
pub fn skellam_exponent(lambda: f64, alpha: f64) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(ZrpError::InvalidArgument("α must be positive".into()));
    }
    let p = skellam_tail(lambda, threshold(alpha, lambda))?;
    Ok(-p.ln() / (alpha * alpha * lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkellamRow {
    pub lambda: f64,
    pub alpha: f64,
    pub m: i64,
    pub tail: f64,
    pub exponent: f64,
    pub concentration: f64,
}

/// Default grid: λ ∈ {20, 40, ..., 200}, α ∈ {0.1, ..., 0.5}.
pub fn default_skellam_grid() -> (Vec<f64>, Vec<f64>) {
    ((1..=10).map(|k| 20.0 * k as f64).collect(), (1..=5).map(|k| k as f64 / 10.0).collect())
}

pub fn skellam_table(lambdas: &[f64], alphas: &[f64]) -> Result<Vec<SkellamRow>> {
    let mut rows = Vec::with_capacity(lambdas.len() * alphas.len());
    for &lambda in lambdas {
        let concentration = poisson_concentration(lambda)?;
        for &alpha in alphas {
            let m = threshold(alpha, lambda);
            let tail = skellam_tail(lambda, m)?;
            rows.push(SkellamRow { lambda, alpha, m, tail, exponent: -tail.ln() / (alpha * alpha * lambda), concentration });
        }
    }
    Ok(rows)
}

pub const SKELLAM_CSV_HEADER: &str = "lambda,alpha,m,tail,exponent,concentration";

pub fn skellam_csv(rows: &[SkellamRow]) -> String {
    let mut s = format!("{SKELLAM_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:e},{},{:e}\n", r.lambda, r.alpha, r.m, r.tail, r.exponent, r.concentration));
    }
    s
}

// ---------------------------------------------------------------------------
// Random-walk no-return probability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoReturnEstimate {
    pub r: usize,
    pub replicas: usize,
    pub seed: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    /// `estimate * r` and its interval.
    pub scaled: f64,
    pub scaled_ci: (f64, f64),
}

/// True if a walk started at 0 avoids 0 on all of `[1, t_end]`. The walk
/// steps ±1 at rate 1 each.
fn avoids_zero<R: Rng + ?Sized>(t_end: f64, rng: &mut R) -> bool {
    let clock_dist = Exp::new(2.0).expect("positive rate");
    let mut t = 0.0;
    let mut x: i64 = 0;
    loop {
        let next = t + clock_dist.sample(rng);
        // The walk sits at x on [t, next).
        if x == 0 && next > 1.0 && t <= t_end {
            return false;
        }
        if next >= t_end {
            return true;
        }
        t = next;
        x += if rng.random_bool(0.5) { 1 } else { -1 };
    }
}

/// Monte Carlo estimate of `P_0(X_t != 0 for all t in [1, r^2])`.
///
/// Replica `i` uses the same stream for every `r`, so estimates are
/// pathwise monotone in `r`.
pub fn rw_no_return_probability(r: usize, replicas: usize, seed: u64) -> Result<NoReturnEstimate> {
    if r == 0 {
        return Err(ZrpError::InvalidArgument("r must be at least 1".into()));
    }
    if replicas < 2 {
        return Err(ZrpError::InsufficientSamples("need at least two replicas".into()));
    }
    let t_end = (r * r) as f64;
    let hits: usize = (0..replicas as u64)
        .into_par_iter()
        .map(|i| usize::from(avoids_zero(t_end, &mut replica_rng(seed, i))))
        .sum();
    let m = replicas as f64;
    let p = hits as f64 / m;
    let se = (p * (1.0 - p) / m).sqrt();
    let ci = (p - 1.96 * se, p + 1.96 * se);
    let rf = r as f64;
    Ok(NoReturnEstimate { r, replicas, seed, estimate: p, std_error: se, ci, scaled: p * rf, scaled_ci: (ci.0 * rf, ci.1 * rf) })
}

// ---------------------------------------------------------------------------
// Exponential tail fit

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFitOptions {
    /// Fit window in survival probability: `s_low <= S(t) <= s_high`, i.e.
    /// between the 50% and 99% quantiles by default.
    pub s_high: f64,
    pub s_low: f64,
    pub bootstrap: usize,
    pub confidence: f64,
    /// Fits with `R^2` below this are flagged as non-exponential.
    pub r2_threshold: f64,
    pub seed: u64,
}

impl Default for TailFitOptions {
    fn default() -> Self {
        TailFitOptions { s_high: 0.5, s_low: 0.01, bootstrap: 1000, confidence: 0.95, r2_threshold: 0.98, seed: 0x5EED }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Fitted decay rate `γ̂`.
    pub rate: f64,
    pub rate_ci: (f64, f64),
    pub window: (f64, f64),
    pub points: usize,
    pub r_squared: f64,
    pub exponential: bool,
    pub samples: usize,
    pub censored: usize,
}

/// Kaplan-Meier survival at each distinct event time, `(t, S(t))`.
pub fn kaplan_meier(times: &[f64], censored: &[bool]) -> Vec<(f64, f64)> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(censored[a].cmp(&censored[b])));
    let mut at_risk = times.len() as f64;
    let mut s = 1.0;
    let mut out = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let t = times[idx[i]];
        let (mut deaths, mut leaving) = (0.0, 0.0);
        while i < idx.len() && times[idx[i]] == t {
            if !censored[idx[i]] {
                deaths += 1.0;
            }
            leaving += 1.0;
            i += 1;
        }
        if deaths > 0.0 {
            s *= 1.0 - deaths / at_risk;
            out.push((t, s));
        }
        at_risk -= leaving;
    }
    out
}

/// OLS of `ln S` on `t` inside the window; returns (rate, R^2, window, points).
fn fit_window(times: &[f64], censored: &[bool], opts: &TailFitOptions) -> Option<(f64, f64, (f64, f64), usize)> {
    let pts: Vec<(f64, f64)> =
        kaplan_meier(times, censored).into_iter().filter(|&(_, s)| s >= opts.s_low && s <= opts.s_high).map(|(t, s)| (t, s.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    Some((-slope, r2, (pts[0].0, pts[pts.len() - 1].0), pts.len()))
}

pub fn fit_exponential_tail(times: &[f64], censored: &[bool], opts: TailFitOptions) -> Result<TailFit> {
    if times.len() != censored.len() {
        return Err(ZrpError::InvalidArgument("times and censoring flags differ in length".into()));
    }
    let n_cens = censored.iter().filter(|&&c| c).count();
    if times.len() - n_cens < 1000 {
        return Err(ZrpError::InsufficientSamples(format!("{} uncensored samples, need 1000", times.len() - n_cens)));
    }
    let (rate, r2, window, points) = fit_window(times, censored, &opts)
        .ok_or_else(|| ZrpError::InsufficientSamples("fewer than three survival points in the fit window".into()))?;
    if rate <= 0.0 {
        return Err(ZrpError::InsufficientSamples(format!("non-decaying survival in the fit window (slope {})", -rate)));
    }
    let n = times.len();
    let mut boot: Vec<f64> = (0..opts.bootstrap as u64)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = replica_rng(opts.seed, b);
            let mut t = Vec::with_capacity(n);
            let mut c = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                t.push(times[i]);
                c.push(censored[i]);
            }
            fit_window(&t, &c, &opts).map(|f| f.0)
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let rate_ci = if boot.len() >= 2 {
        let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        let tail = (1.0 - opts.confidence) / 2.0;
        // Percentile interval, widened if needed so it always contains the point estimate.
        (q(tail).min(rate), q(1.0 - tail).max(rate))
    } else {
        (rate, rate)
    };
    Ok(TailFit { rate, rate_ci, window, points, r_squared: r2, exponential: r2 >= opts.r2_threshold, samples: n, censored: n_cens })
}
