//! The ζ chain of the Step 1 analysis, its stationary weights, its time
//! reversal and the hitting time `W` together with the drift quantities
//! `M_t`, `B_t`, `J_t`, `U_t` and `Y_t`.
//!
//! A state is either the amalgamated state `b` or a triple `(η, s, t)` with
//! `s != t`, where `η` counts the `j + 2` particles on `Complete(n)` and `s`,
//! `t` hold the particles of rank `j + 1` and `j + 2`. Vertex `u` expels its
//! highest ranking particle at rate 1 to a uniform other vertex, so a low
//! ranking particle only moves when it is alone.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZrpError};
use crate::model::{enumerate_configurations, space_size, Configuration, Vertex};
use crate::seed::{derive_seed, replica_rng};
use crate::spectral::uniformization::{evolve, DEFAULT_TERM_BUDGET, DEFAULT_TRUNCATION};
use crate::stats::mean_and_se;

/// Largest ζ state space that will be enumerated.
pub const ZETA_STATE_LIMIT: u128 = 200_000;

/// Out-rates of an exact chain, sorted by target.
pub type ExactRows = Vec<Vec<(usize, BigRational)>>;

fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn frac(p: u64, q: u64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZetaState {
    /// All states `(η, u, u)` merged.
    B,
    Pair { eta: Configuration, s: Vertex, t: Vertex },
}

impl ZetaState {
    /// Membership in `B`: `b` itself or `η(s) = η(t)`.
    pub fn in_b_set(&self) -> bool {
        match self {
            ZetaState::B => true,
            ZetaState::Pair { eta, s, t } => eta.get(*s) == eta.get(*t),
        }
    }

    /// `M = max(η(s), η(t))`, zero for `b`.
    pub fn m(&self) -> u32 {
        match self {
            ZetaState::B => 0,
            ZetaState::Pair { eta, s, t } => eta.get(*s).max(eta.get(*t)),
        }
    }

    /// Stationary weight `η(s)η(t)`, or 1 for `b`.
    pub fn weight(&self) -> u64 {
        match self {
            ZetaState::B => 1,
            ZetaState::Pair { eta, s, t } => eta.get(*s) as u64 * eta.get(*t) as u64,
        }
    }
}

/// Exit rates of `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitRule {
    /// `q_{b,x} = 2/(n-1)` for every `x`; the weights `η(s)η(t)` balance.
    Balanced,
    /// `q_{b,x} = 1/(n-1)` when `η(s) = η(t) = 1` and `2/(n-1)` otherwise.
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZetaChain {
    n: usize,
    j: usize,
    rule: ExitRule,
    states: Vec<ZetaState>,
    index: HashMap<ZetaState, usize>,
    rates: ExactRows,
    pi: Vec<BigRational>,
    reversed: bool,
    b_suppressed: bool,
}

impl ZetaChain {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn rule(&self) -> ExitRule {
        self.rule
    }

    pub fn states(&self) -> &[ZetaState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of `b`; always 0.
    pub fn b_index(&self) -> usize {
        0
    }

    pub fn index_of(&self, state: &ZetaState) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn rows(&self) -> &ExactRows {
        &self.rates
    }

    pub fn rate(&self, x: usize, y: usize) -> BigRational {
        self.rates[x]
            .binary_search_by_key(&y, |&(z, _)| z)
            .map(|k| self.rates[x][k].1.clone())
            .unwrap_or_else(|_| BigRational::zero())
    }

    pub fn pi(&self) -> &[BigRational] {
        &self.pi
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    pub fn b_suppressed(&self) -> bool {
        self.b_suppressed
    }

    pub fn rows_f64(&self) -> Vec<Vec<(usize, f64)>> {
        self.rates.iter().map(|row| row.iter().map(|(y, q)| (*y, to_f64(q))).collect()).collect()
    }

    /// `π` normalized to a probability vector.
    pub fn stationary_f64(&self) -> Vec<f64> {
        let total: BigRational = self.pi.iter().sum();
        self.pi.iter().map(|p| to_f64(&(p / &total))).collect()
    }

    /// Indicator of `B` per state.
    pub fn b_set(&self) -> Vec<bool> {
        self.states.iter().map(ZetaState::in_b_set).collect()
    }

    /// Largest number of successors of any state other than `b`.
    pub fn max_out_degree(&self) -> usize {
        self.rates.iter().skip(1).map(Vec::len).max().unwrap_or(0)
    }
}

fn accumulate(row: &mut BTreeMap<usize, BigRational>, y: usize, q: BigRational) {
    *row.entry(y).or_insert_with(BigRational::zero) += q;
}

fn finish(rows: Vec<BTreeMap<usize, BigRational>>) -> ExactRows {
    rows.into_iter().map(|r| r.into_iter().filter(|(_, q)| !q.is_zero()).collect()).collect()
}

/// All ζ states for `j + 2` particles on `Complete(n)`, `b` first.
pub fn zeta_states(n: usize, j: usize) -> Result<Vec<ZetaState>> {
    if n < 3 {
        return Err(ZrpError::InvalidArgument(format!("the ζ chain needs n >= 3, got {n}")));
    }
    let r = j + 2;
    let bound = space_size(n, r).and_then(|s| s.checked_mul((n * (n - 1)) as u128)).unwrap_or(u128::MAX);
    if bound > ZETA_STATE_LIMIT {
        return Err(ZrpError::Capacity { size: bound, limit: ZETA_STATE_LIMIT });
    }
    let mut states = vec![ZetaState::B];
    for eta in enumerate_configurations(n, r)? {
        for s in 0..n {
            for t in 0..n {
                if s != t && eta.get(s) >= 1 && eta.get(t) >= 1 {
                    states.push(ZetaState::Pair { eta: eta.clone(), s, t });
                }
            }
        }
    }
    Ok(states)
}

/// The ζ chain with `j + 2` particles on `Complete(n)`.
pub fn build_zeta_chain(n: usize, j: usize, rule: ExitRule) -> Result<ZetaChain> {
    let states = zeta_states(n, j)?;
    let index: HashMap<ZetaState, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let step = frac(1, (n - 1) as u64);
    let mut rows: Vec<BTreeMap<usize, BigRational>> = vec![BTreeMap::new(); states.len()];
    for (x, state) in states.iter().enumerate().skip(1) {
        let ZetaState::Pair { eta, s, t } = state else { unreachable!() };
        for u in 0..n {
            if eta.get(u) == 0 {
                continue;
            }
            for w in (0..n).filter(|&w| w != u) {
                let (mut s2, mut t2) = (*s, *t);
                if u == *s && eta.get(u) == 1 {
                    s2 = w;
                } else if u == *t && eta.get(u) == 1 {
                    t2 = w;
                }
                let target = if s2 == t2 {
                    ZetaState::B
                } else {
                    ZetaState::Pair { eta: eta.moved(u, w), s: s2, t: t2 }
                };
                accumulate(&mut rows[x], index[&target], step.clone());
            }
        }
        let exit = match rule {
            ExitRule::AsPrinted if eta.get(*s) == 1 && eta.get(*t) == 1 => step.clone(),
            _ => &step * int(2),
        };
        accumulate(&mut rows[0], x, exit);
    }
    let pi = states.iter().map(|s| int(s.weight())).collect();
    Ok(ZetaChain { n, j, rule, states, index, rates: finish(rows), pi, reversed: false, b_suppressed: false })
}

/// `Q_in(x) - Q_out(x)` for every state of the chain with rates `rows` and weights `pi`.
pub fn generator_residuals(rows: &[Vec<(usize, BigRational)>], pi: &[BigRational]) -> Vec<BigRational> {
    let mut res = vec![BigRational::zero(); rows.len()];
    for (x, row) in rows.iter().enumerate() {
        for (y, q) in row {
            let flow = &pi[x] * q;
            res[*y] += &flow;
            res[x] -= flow;
        }
    }
    res
}

/// Largest `|Q_in(x) - Q_out(x)|` over `x != b` for the weights `pi`.
pub fn balance_residuals_with(chain: &ZetaChain, pi: &[BigRational]) -> BigRational {
    generator_residuals(&chain.rates, pi)
        .into_iter()
        .skip(1)
        .map(|r| r.abs())
        .max()
        .unwrap_or_else(BigRational::zero)
}

/// Largest balance residual over `x != b` for `π(b) = 1`, `π(η, s, t) = η(s)η(t)`.
pub fn balance_residuals(chain: &ZetaChain) -> BigRational {
    balance_residuals_with(chain, &chain.pi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub n: usize,
    pub j: usize,
    pub rule: ExitRule,
    pub states: usize,
    /// Exact residual as `num/den`.
    pub max_residual: String,
    pub max_residual_decimal: f64,
    /// Number of states `x != b` with a nonzero residual.
    pub unbalanced_states: usize,
    /// Residual at `b`; zero whenever all other residuals are.
    pub b_residual: String,
}

pub fn balance_report(chain: &ZetaChain) -> BalanceReport {
    let res = generator_residuals(&chain.rates, &chain.pi);
    let max = res.iter().skip(1).map(|r| r.abs()).max().unwrap_or_else(BigRational::zero);
    BalanceReport {
        n: chain.n,
        j: chain.j,
        rule: chain.rule,
        states: chain.len(),
        max_residual: max.to_string(),
        max_residual_decimal: to_f64(&max),
        unbalanced_states: res.iter().skip(1).filter(|r| !r.is_zero()).count(),
        b_residual: res[0].to_string(),
    }
}

/// Time reversal `q̃_{y,x} = π(x) q_{x,y} / π(y)`. With `suppress_b`, the
/// reversed transitions into `b` are dropped.
pub fn reverse_chain(chain: &ZetaChain, suppress_b: bool) -> ZetaChain {
    let mut rows: Vec<BTreeMap<usize, BigRational>> = vec![BTreeMap::new(); chain.len()];
    for (x, row) in chain.rates.iter().enumerate() {
        if suppress_b && x == chain.b_index() {
            continue;
        }
        for (y, q) in row {
            accumulate(&mut rows[*y], x, &chain.pi[x] * q / &chain.pi[*y]);
        }
    }
    ZetaChain { rates: finish(rows), reversed: !chain.reversed, b_suppressed: suppress_b, ..chain.clone() }
}

/// Reversed rates between states other than `b` from the attempt
/// description: each ordered pair `(v, w)` fires at rate
/// `((η(w) + 1)/(h(w) + 1))/(n - 1)`, `h` counting high ranking particles; a
/// high ranking particle is chosen with probability `h(v)/η(v)` and always
/// moves, a low ranking one only moves to an empty vertex. Row `b` is empty.
pub fn closed_form_reversed_rates(chain: &ZetaChain) -> ExactRows {
    let n = chain.n;
    let mut rows: Vec<BTreeMap<usize, BigRational>> = vec![BTreeMap::new(); chain.len()];
    for (x, state) in chain.states.iter().enumerate().skip(1) {
        let ZetaState::Pair { eta, s, t } = state else { unreachable!() };
        let high = |v: Vertex| eta.get(v) as u64 - u64::from(v == *s) - u64::from(v == *t);
        for v in (0..n).filter(|&v| eta.get(v) > 0) {
            let occ = eta.get(v) as u64;
            for w in (0..n).filter(|&w| w != v) {
                let attempt = frac(eta.get(w) as u64 + 1, high(w) + 1) / int((n - 1) as u64);
                if high(v) > 0 {
                    let y = ZetaState::Pair { eta: eta.moved(v, w), s: *s, t: *t };
                    accumulate(&mut rows[x], chain.index[&y], &attempt * frac(high(v), occ));
                }
                if (v == *s || v == *t) && eta.get(w) == 0 {
                    let (s2, t2) = if v == *s { (w, *t) } else { (*s, w) };
                    let y = ZetaState::Pair { eta: eta.moved(v, w), s: s2, t: t2 };
                    accumulate(&mut rows[x], chain.index[&y], &attempt * frac(1, occ));
                }
            }
        }
    }
    finish(rows)
}

/// Number of states other than `b` whose reversed out-rates (with
/// transitions into `b` suppressed) differ from the attempt description.
pub fn closed_form_mismatches(chain: &ZetaChain) -> Result<usize> {
    if chain.reversed {
        return Err(ZrpError::InvalidArgument("expected the forward ζ chain".into()));
    }
    let rev = reverse_chain(chain, true);
    let closed = closed_form_reversed_rates(chain);
    Ok((1..chain.len()).filter(|&x| rev.rates[x] != closed[x]).count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBoundReport {
    pub states_checked: usize,
    /// `(state, vertex)` pairs where the expel rate is below `1 - 1/η(v)`.
    pub expel_violations: usize,
    /// `(state, vertex)` pairs where the attempt rate exceeds `1 + 1/η(v)`.
    pub attempt_violations: usize,
}

impl RateBoundReport {
    pub fn holds(&self) -> bool {
        self.expel_violations == 0 && self.attempt_violations == 0
    }
}

/// Checks, state by state outside `B`, that in the reversed chain with
/// transitions into `b` suppressed every nonempty vertex `v` expels at total
/// rate `>= 1 - 1/η(v)` and receives attempts at total rate `<= 1 + 1/η(v)`.
pub fn rate_structure_check(chain: &ZetaChain) -> Result<RateBoundReport> {
    if chain.reversed {
        return Err(ZrpError::InvalidArgument("expected the forward ζ chain".into()));
    }
    let rev = reverse_chain(chain, true);
    let n = chain.n;
    let one = int(1);
    let mut report = RateBoundReport { states_checked: 0, expel_violations: 0, attempt_violations: 0 };
    for (x, state) in chain.states.iter().enumerate().skip(1) {
        if state.in_b_set() {
            continue;
        }
        let ZetaState::Pair { eta, s, t } = state else { unreachable!() };
        report.states_checked += 1;
        let mut expel = vec![BigRational::zero(); n];
        for (y, q) in &rev.rates[x] {
            let ZetaState::Pair { eta: eta2, .. } = &chain.states[*y] else { continue };
            if let Some(src) = (0..n).find(|&v| eta2.get(v) < eta.get(v)) {
                expel[src] += q;
            }
        }
        for v in (0..n).filter(|&v| eta.get(v) > 0) {
            let inv = frac(1, eta.get(v) as u64);
            if expel[v] < &one - &inv {
                report.expel_violations += 1;
            }
            let high = eta.get(v) as u64 - u64::from(v == *s) - u64::from(v == *t);
            let attempts = frac(eta.get(v) as u64 + 1, high + 1);
            if attempts > &one + &inv {
                report.attempt_violations += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Drift quantities

/// `ρ̃` and `α = 1/(ρ̃(ρ̃+1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    pub rho_tilde: f64,
    pub alpha: f64,
}

impl DriftConstants {
    pub fn new(rho_tilde: f64) -> Result<Self> {
        if !(rho_tilde > 0.0 && rho_tilde.is_finite()) {
            return Err(ZrpError::InvalidArgument(format!("ρ̃ must be positive, got {rho_tilde}")));
        }
        Ok(DriftConstants { rho_tilde, alpha: 1.0 / (rho_tilde * (rho_tilde + 1.0)) })
    }

    /// `ρ̃ = 64 (ρ + 1) / C`.
    pub fn from_density(rho: f64, c_param: f64) -> Result<Self> {
        if !(c_param > 0.0 && rho >= 0.0) {
            return Err(ZrpError::InvalidArgument(format!("need ρ >= 0 and C > 0, got ρ = {rho}, C = {c_param}")));
        }
        Self::new(64.0 * (rho + 1.0) / c_param)
    }

    /// `w(k) = -max(1/(k(k-1)), α)` for `k >= 2`.
    pub fn weight(&self, k: u32) -> f64 {
        assert!(k >= 2, "w(k) is defined for k >= 2");
        let k = k as f64;
        -(1.0 / (k * (k - 1.0))).max(self.alpha)
    }

    /// `𝒲(k) = Σ_{i=2}^{k} w(i)`, with `𝒲(1) = 0`.
    pub fn cumulative(&self, k: u32) -> f64 {
        (2..=k).map(|i| self.weight(i)).sum()
    }

    /// Size of a downward jump of `M` from `from` to `to`: `Σ_{k=to+1}^{from-1} w(k)`.
    pub fn jump_size(&self, from: u32, to: u32) -> f64 {
        (to + 1..from).map(|k| self.weight(k)).sum()
    }
}

/// Running values of `M_t`, `B_t`, `J_t` and `U_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTracker {
    pub constants: DriftConstants,
    pub m: u32,
    pub b: u64,
    pub jumps: f64,
    /// `U_t`, updated by increments.
    pub u: f64,
    pub m_max: u32,
}

impl DriftTracker {
    pub fn new(constants: DriftConstants, m0: u32) -> Self {
        DriftTracker { constants, m: m0, b: 0, jumps: 0.0, u: constants.cumulative(m0), m_max: m0 }
    }

    /// Records a new value of `M`.
    pub fn record_m(&mut self, m: u32) {
        let c = self.constants;
        if m < self.m {
            self.jumps += c.jump_size(self.m, m);
        }
        self.u += c.cumulative(m) - c.cumulative(self.m) + if m < self.m { c.jump_size(self.m, m) } else { 0.0 };
        self.m = m;
        self.m_max = self.m_max.max(m);
        debug_assert!((self.u - self.u_identity()).abs() < 1e-9, "U drifted from W(M) + J");
    }

    pub fn record_failed_attempt(&mut self) {
        self.b += 1;
    }

    /// `𝒲(M_t) + J_t`.
    pub fn u_identity(&self) -> f64 {
        self.constants.cumulative(self.m) + self.jumps
    }

    /// `Y_t = U_t - α B_t + 4 t α / ρ̃`.
    pub fn y(&self, t: f64) -> f64 {
        let c = self.constants;
        self.u - c.alpha * self.b as f64 + 4.0 * t * c.alpha / c.rho_tilde
    }
}

/// Generator of the reversed chain (transitions into `b` suppressed) applied
/// to `Y` at every state outside `B`, as `(state, drift)`.
pub fn exact_drift(chain: &ZetaChain, constants: DriftConstants) -> Vec<(usize, f64)> {
    let n = chain.n;
    let closed = closed_form_reversed_rates(chain);
    let c = constants;
    let mut out = Vec::new();
    for (x, state) in chain.states.iter().enumerate().skip(1) {
        if state.in_b_set() {
            continue;
        }
        let ZetaState::Pair { eta, s, t } = state else { unreachable!() };
        let m = state.m();
        let mut drift = 4.0 * c.alpha / c.rho_tilde;
        for (y, q) in &closed[x] {
            let m2 = chain.states[*y].m();
            let du = c.cumulative(m2) - c.cumulative(m) + if m2 < m { c.jump_size(m, m2) } else { 0.0 };
            drift += to_f64(q) * du;
        }
        let target = if eta.get(*s) > eta.get(*t) { *s } else { *t };
        let empty = (0..n).filter(|&v| v != target && eta.get(v) == 0).count();
        let high = eta.get(target) - 1;
        let attempt = (eta.get(target) + 1) as f64 / (high + 1) as f64 / (n - 1) as f64;
        drift -= c.alpha * empty as f64 * attempt;
        out.push((x, drift));
    }
    out
}

// ---------------------------------------------------------------------------
// Simulation of W

/// Law of the starting state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartLaw {
    /// Normalized `π`.
    Stationary,
    /// A fixed state index.
    State(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WSample {
    pub replica: u64,
    pub seed: u64,
    /// Hitting time of `B`, or the horizon when censored.
    #[serde(rename = "W")]
    pub w: f64,
    pub censored: bool,
    pub start: usize,
    /// `Y_0` and `Y_{h ∧ W}`.
    pub y_start: f64,
    pub y_end: f64,
    /// `(Y_{h ∧ W} - Y_0) / h`.
    pub mean_drift: f64,
    pub b_final: u64,
    pub m_max: u32,
    pub jumps: f64,
    pub u_final: f64,
    pub events: u64,
    /// `(time, M)` at every change of `M`, starting with `(0, M_0)`.
    pub m_path: Vec<(f64, u32)>,
}

fn sample_start<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &p) in weights.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    weights.len() - 1
}

/// Runs the reversed ζ dynamics (transitions into `b` suppressed) by
/// attempts until the state enters `B` or the horizon passes. `B_t` counts
/// attempts into the vertex realizing `M` whose source is empty.
pub fn simulate_reversed_until_w<R: Rng + ?Sized>(
    chain: &ZetaChain,
    start: StartLaw,
    horizon: f64,
    constants: DriftConstants,
    rng: &mut R,
) -> Result<WSample> {
    if !(chain.reversed && chain.b_suppressed) {
        return Err(ZrpError::InvalidArgument("expected the reversed ζ chain with transitions into b suppressed".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ZrpError::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let x0 = match start {
        StartLaw::Stationary => sample_start(&chain.stationary_f64(), rng),
        StartLaw::State(i) if i < chain.len() => i,
        StartLaw::State(i) => return Err(ZrpError::OutOfRange { index: i as u128, size: chain.len() as u128 }),
    };
    let mut sample = WSample {
        replica: 0,
        seed: 0,
        w: 0.0,
        censored: false,
        start: x0,
        y_start: 0.0,
        y_end: 0.0,
        mean_drift: 0.0,
        b_final: 0,
        m_max: 0,
        jumps: 0.0,
        u_final: 0.0,
        events: 0,
        m_path: Vec::new(),
    };
    let state = &chain.states[x0];
    if state.in_b_set() {
        sample.m_max = state.m();
        return Ok(sample);
    }
    let ZetaState::Pair { eta, s, t } = state else { unreachable!() };
    let n = chain.n;
    let mut occ: Vec<u32> = eta.occupancy().to_vec();
    let (mut s, mut t) = (*s, *t);
    let mut tracker = DriftTracker::new(constants, occ[s].max(occ[t]));
    sample.y_start = tracker.y(0.0);
    sample.m_path.push((0.0, tracker.m));
    let mut clock = 0.0;
    let mut attempt = vec![0.0; n];
    loop {
        for (w, a) in attempt.iter_mut().enumerate() {
            let high = occ[w] - u32::from(w == s) - u32::from(w == t);
            *a = (occ[w] + 1) as f64 / (high + 1) as f64;
        }
        let total: f64 = attempt.iter().sum();
        let dt = Exp::new(total).expect("positive rate").sample(rng);
        if clock + dt >= horizon {
            clock = horizon;
            sample.censored = true;
            break;
        }
        clock += dt;
        sample.events += 1;
        let w = sample_start(&attempt.iter().map(|a| a / total).collect::<Vec<_>>(), rng);
        let mut v = rng.random_range(0..n - 1);
        if v >= w {
            v += 1;
        }
        let target = if occ[s] > occ[t] { s } else { t };
        if occ[v] == 0 {
            if w == target {
                tracker.record_failed_attempt();
            }
            continue;
        }
        let high = occ[v] - u32::from(v == s) - u32::from(v == t);
        if rng.random_range(0..occ[v]) >= high {
            if occ[w] != 0 {
                continue;
            }
            if v == s {
                s = w;
            } else {
                t = w;
            }
        }
        occ[v] -= 1;
        occ[w] += 1;
        let m = occ[s].max(occ[t]);
        if m != tracker.m {
            tracker.record_m(m);
            sample.m_path.push((clock, m));
        }
        if occ[s] == occ[t] {
            break;
        }
    }
    sample.w = clock;
    sample.y_end = tracker.y(clock);
    sample.mean_drift = (sample.y_end - sample.y_start) / horizon;
    sample.b_final = tracker.b;
    sample.m_max = tracker.m_max;
    sample.jumps = tracker.jumps;
    sample.u_final = tracker.u;
    Ok(sample)
}

/// Independent replicas of [`simulate_reversed_until_w`]; replica `i` uses
/// the stream derived from `(seed, i)`.
pub fn sample_w(
    chain: &ZetaChain,
    start: StartLaw,
    horizon: f64,
    constants: DriftConstants,
    replicas: usize,
    seed: u64,
) -> Result<Vec<WSample>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            let mut s = simulate_reversed_until_w(chain, start, horizon, constants, &mut rng)?;
            s.replica = i;
            s.seed = derive_seed(seed, i);
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub replicas: usize,
    pub horizon: f64,
    /// Mean of `(Y_{h ∧ W} - Y_0) / h` over replicas.
    pub mean: f64,
    pub std_error: f64,
    pub censored: usize,
    /// `mean >= -2 · std_error`.
    pub non_negative: bool,
}

pub fn drift_summary(samples: &[WSample], horizon: f64) -> Result<DriftSummary> {
    if samples.len() < 2 {
        return Err(ZrpError::InsufficientSamples(format!("{} replicas", samples.len())));
    }
    let drifts: Vec<f64> = samples.iter().map(|s| s.mean_drift).collect();
    let (mean, se) = mean_and_se(&drifts);
    Ok(DriftSummary {
        replicas: samples.len(),
        horizon,
        mean,
        std_error: se,
        censored: samples.iter().filter(|s| s.censored).count(),
        non_negative: mean >= -2.0 * se,
    })
}

pub const W_CSV_HEADER: &str = "replica,W,censored,mean_drift,B_final,M_max";

pub fn w_samples_csv(samples: &[WSample]) -> String {
    let mut out = String::from(W_CSV_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&format!("{},{},{},{},{},{}\n", s.replica, s.w, s.censored, s.mean_drift, s.b_final, s.m_max));
    }
    out
}

// ---------------------------------------------------------------------------
// Exact checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WAgreement {
    pub times: Vec<f64>,
    /// `P_π(W > t)` for the forward chain.
    pub forward: Vec<f64>,
    /// `P̃_π(W > t)` for the reversed chain.
    pub reversed: Vec<f64>,
    /// Same for the reversed chain with transitions into `b` suppressed.
    pub suppressed: Vec<f64>,
    pub max_difference: f64,
}

fn absorbed_survival(chain: &ZetaChain, times: &[f64]) -> Result<Vec<f64>> {
    let absorbing = chain.b_set();
    let rows: Vec<Vec<(usize, f64)>> =
        chain.rows_f64().into_iter().zip(&absorbing).map(|(r, &a)| if a { Vec::new() } else { r }).collect();
    let p0 = chain.stationary_f64();
    times
        .iter()
        .map(|&t| {
            let p = evolve(&rows, &p0, t, DEFAULT_TRUNCATION, DEFAULT_TERM_BUDGET)?;
            Ok(p.iter().zip(&absorbing).filter(|(_, &a)| !a).map(|(p, _)| p).sum())
        })
        .collect()
}

/// Survival of `W` from `π` for the forward and reversed chains, both
/// absorbed on `B`, by uniformization.
pub fn forward_reverse_w_agreement(chain: &ZetaChain, times: &[f64]) -> Result<WAgreement> {
    if chain.reversed {
        return Err(ZrpError::InvalidArgument("expected the forward ζ chain".into()));
    }
    let forward = absorbed_survival(chain, times)?;
    let reversed = absorbed_survival(&reverse_chain(chain, false), times)?;
    let suppressed = absorbed_survival(&reverse_chain(chain, true), times)?;
    let max_difference = forward.iter().zip(&reversed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(WAgreement { times: times.to_vec(), forward, reversed, suppressed, max_difference })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationCheck {
    pub threshold: f64,
    pub state: usize,
    pub horizon: f64,
    pub replicas: usize,
    /// `|S| · max π(z)/π(y)`.
    pub c: f64,
    /// `(P_y(W_x >= a), standard error)` for every start `y`.
    pub forward: Vec<(f64, f64)>,
    /// `(P̃_z(W_x >= a), standard error)` for every start `z`.
    pub reversed: Vec<(f64, f64)>,
    /// `c · max_z P̃_z(W_x >= a)`.
    pub bound: f64,
    /// `P_y - 2 se <= c · (P̃_z + 2 se)` for every `y`, maximizing over `z`.
    pub holds: bool,
}

/// Minimum replica count for the occupation check.
pub const MIN_OCCUPATION_REPLICAS: usize = 100;

fn occupation_time<R: Rng + ?Sized>(rows: &[Vec<(usize, f64)>], start: usize, x: usize, horizon: f64, rng: &mut R) -> f64 {
    let mut cur = start;
    let mut clock = 0.0;
    let mut occupied = 0.0;
    loop {
        let total: f64 = rows[cur].iter().map(|&(_, q)| q).sum();
        let dt = if total > 0.0 { Exp::new(total).expect("positive rate").sample(rng) } else { f64::INFINITY };
        let stay = dt.min(horizon - clock);
        if cur == x {
            occupied += stay;
        }
        clock += dt;
        if clock >= horizon {
            return occupied;
        }
        let mut u = rng.random::<f64>() * total;
        let mut next = rows[cur].last().map(|&(y, _)| y).unwrap_or(cur);
        for &(y, q) in &rows[cur] {
            if u < q {
                next = y;
                break;
            }
            u -= q;
        }
        cur = next;
    }
}

fn hit_probabilities(rows: &[Vec<(usize, f64)>], x: usize, a: f64, horizon: f64, replicas: usize, seed: u64) -> Vec<(f64, f64)> {
    (0..rows.len())
        .map(|y| {
            let hits: Vec<f64> = (0..replicas as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replica_rng(seed, (y as u64) << 40 | i);
                    f64::from(occupation_time(rows, y, x, horizon, &mut rng) >= a)
                })
                .collect();
            mean_and_se(&hits)
        })
        .collect()
}

/// Monte Carlo check of `P_y(W_x >= a) <= c · max_z P̃_z(W_x >= a)` for
/// every start `y`, where `W_x` is the time spent in `x` during `(0, s)`.
pub fn occupation_reversal_check(
    chain: &ZetaChain,
    threshold: f64,
    state: usize,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<OccupationCheck> {
    if replicas < MIN_OCCUPATION_REPLICAS {
        return Err(ZrpError::InsufficientSamples(format!("{replicas} replicas, need {MIN_OCCUPATION_REPLICAS}")));
    }
    if state >= chain.len() {
        return Err(ZrpError::OutOfRange { index: state as u128, size: chain.len() as u128 });
    }
    let max_pi = chain.pi.iter().max().cloned().unwrap_or_else(BigRational::zero);
    let min_pi = chain.pi.iter().min().cloned().unwrap_or_else(BigRational::zero);
    let c = chain.len() as f64 * to_f64(&(max_pi / min_pi));
    let forward = hit_probabilities(&chain.rows_f64(), state, threshold, horizon, replicas, seed);
    let reversed = hit_probabilities(&reverse_chain(chain, false).rows_f64(), state, threshold, horizon, replicas, seed ^ 1);
    let (best, best_se) = reversed.iter().copied().fold((0.0, 0.0), |acc, p| if p.0 > acc.0 { p } else { acc });
    let holds = forward.iter().all(|&(p, se)| p - 2.0 * se <= c * (best + 2.0 * best_se));
    Ok(OccupationCheck { threshold, state, horizon, replicas, c, forward, reversed, bound: c * best, holds })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::model::{transitions, GraphSpec};
    use crate::seed::replica_rng;

    fn chain(n: usize, j: usize) -> ZetaChain {
        build_zeta_chain(n, j, ExitRule::Balanced).unwrap()
    }

    /// Projects every placement of `j + 2` labelled particles.
    fn exhaustive_state_count(n: usize, j: usize) -> usize {
        let r = j + 2;
        let mut seen = HashSet::new();
        for code in 0..n.pow(r as u32) {
            let pos: Vec<usize> = (0..r).map(|k| code / n.pow(k as u32) % n).collect();
            let (s, t) = (pos[r - 2], pos[r - 1]);
            if s == t {
                continue;
            }
            let mut occ = vec![0u32; n];
            pos.iter().for_each(|&p| occ[p] += 1);
            seen.insert((occ, s, t));
        }
        seen.len() + 1
    }

    #[test]
    fn state_enumeration_matches_exhaustive_oracle() {
        assert_eq!(chain(3, 0).len(), 7);
        for (n, j) in [(3, 0), (3, 1), (4, 0), (4, 1), (5, 2)] {
            assert_eq!(chain(n, j).len(), exhaustive_state_count(n, j), "n={n} j={j}");
        }
    }

    #[test]
    fn rate_structure_is_sparse_and_positive() {
        for (n, j) in [(3, 0), (3, 1), (4, 1), (5, 2)] {
            let c = chain(n, j);
            assert!(c.max_out_degree() <= (n - 1) * (j + 2));
            assert!(c.rows().iter().flatten().all(|(_, q)| q > &BigRational::zero()));
        }
    }

    #[test]
    fn capacity_is_enforced() {
        assert!(matches!(build_zeta_chain(30, 10, ExitRule::Balanced), Err(ZrpError::Capacity { .. })));
        assert!(build_zeta_chain(2, 0, ExitRule::Balanced).is_err());
    }

    #[test]
    fn balanced_weights_have_zero_residuals() {
        for (n, j) in [(3, 0), (3, 1), (4, 0), (4, 1), (5, 1)] {
            let c = chain(n, j);
            assert!(balance_residuals(&c).is_zero(), "n={n} j={j}");
            let report = balance_report(&c);
            assert_eq!(report.unbalanced_states, 0);
            assert_eq!(report.b_residual, "0");
        }
    }

    #[test]
    fn printed_exit_rule_leaves_a_residual_of_one_over_n_minus_one() {
        for (n, j) in [(3, 0), (4, 1)] {
            let c = build_zeta_chain(n, j, ExitRule::AsPrinted).unwrap();
            assert_eq!(balance_residuals(&c), frac(1, (n - 1) as u64));
            let res = generator_residuals(c.rows(), c.pi());
            for (x, st) in c.states().iter().enumerate().skip(1) {
                let ZetaState::Pair { eta, s, t } = st else { unreachable!() };
                let lone = eta.get(*s) == 1 && eta.get(*t) == 1;
                assert_eq!(res[x].is_zero(), !lone);
            }
        }
    }

    #[test]
    fn flat_weights_do_not_balance() {
        let c = chain(3, 1);
        let ones = vec![int(1); c.len()];
        assert!(!balance_residuals_with(&c, &ones).is_zero());
    }

    #[test]
    fn plain_process_balances_with_uniform_weights() {
        let g = GraphSpec::complete(4).unwrap();
        let configs = enumerate_configurations(4, 3).unwrap();
        let index: HashMap<Configuration, usize> = configs.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        let rows: ExactRows = configs
            .iter()
            .map(|c| {
                let mut row = BTreeMap::new();
                for (y, _) in transitions(&g, c) {
                    accumulate(&mut row, index[&y], frac(1, 3));
                }
                row.into_iter().collect()
            })
            .collect();
        let pi = vec![int(1); configs.len()];
        assert!(generator_residuals(&rows, &pi).iter().all(Zero::is_zero));
    }

    #[test]
    fn long_run_occupation_matches_weights() {
        let c = chain(3, 1);
        let rows = c.rows_f64();
        let pi = c.stationary_f64();
        let mut rng = replica_rng(5, 0);
        let horizon = 20_000.0;
        let mut time = vec![0.0; c.len()];
        let (mut cur, mut clock) = (0usize, 0.0);
        while clock < horizon {
            let total: f64 = rows[cur].iter().map(|p| p.1).sum();
            let dt = Exp::new(total).unwrap().sample(&mut rng);
            time[cur] += dt.min(horizon - clock);
            clock += dt;
            let mut u = rng.random::<f64>() * total;
            for &(y, q) in &rows[cur] {
                if u < q {
                    cur = y;
                    break;
                }
                u -= q;
            }
        }
        for (x, p) in pi.iter().enumerate() {
            assert!((time[x] / horizon - p).abs() < 0.01, "state {x}: {} vs {p}", time[x] / horizon);
        }
    }

    #[test]
    fn reversal_identity_and_involution() {
        for (n, j) in [(3, 1), (4, 1)] {
            let c = chain(n, j);
            let rev = reverse_chain(&c, false);
            for (x, row) in c.rows().iter().enumerate() {
                for (y, q) in row {
                    if c.pi()[x] == c.pi()[*y] {
                        assert_eq!(&rev.rate(*y, x), q);
                    }
                }
            }
            assert_eq!(reverse_chain(&rev, false), c);
            assert!(balance_residuals(&rev).is_zero());
        }
    }

    #[test]
    fn reversed_rates_match_attempt_description() {
        for (n, j) in [(3, 0), (3, 1), (4, 1), (5, 2)] {
            assert_eq!(closed_form_mismatches(&chain(n, j)).unwrap(), 0, "n={n} j={j}");
        }
    }

    #[test]
    fn expel_and_attempt_rate_bounds_hold() {
        for (n, j) in [(3, 1), (4, 1), (5, 2)] {
            let r = rate_structure_check(&chain(n, j)).unwrap();
            assert!(r.states_checked > 0);
            assert!(r.holds(), "{r:?}");
        }
    }

    #[test]
    fn drift_constants_for_rho_tilde_two() {
        let c = DriftConstants::new(2.0).unwrap();
        assert!((c.alpha - 1.0 / 6.0).abs() < 1e-15);
        assert!((c.weight(2) + 0.5).abs() < 1e-15);
        assert!((c.weight(3) + 1.0 / 6.0).abs() < 1e-15);
        assert!((c.cumulative(3) + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.cumulative(1), 0.0);
        // Past ρ̃ the weights sit at -α.
        assert!((c.weight(4) + 1.0 / 6.0).abs() < 1e-15);
        let d = DriftConstants::from_density(1.0, 2.0).unwrap();
        assert_eq!(d.rho_tilde, 64.0);
    }

    #[test]
    fn tracker_increments_match_identity() {
        let c = DriftConstants::new(3.0).unwrap();
        let mut tr = DriftTracker::new(c, 4);
        for m in [5, 6, 2, 3, 1, 4, 2] {
            tr.record_m(m);
            assert!((tr.u - tr.u_identity()).abs() < 1e-12);
            assert!(tr.u <= 0.0 && tr.jumps <= 0.0);
        }
        assert_eq!(tr.m_max, 6);
        tr.record_failed_attempt();
        assert!((tr.y(0.0) - (tr.u - c.alpha)).abs() < 1e-15);
    }

    #[test]
    fn generator_drift_of_y_is_non_negative() {
        for (n, j) in [(4, 1), (5, 2), (6, 2)] {
            let c = chain(n, j);
            for rt in [0.5, 2.0, 5.0, 64.0 * 2.0] {
                let k = DriftConstants::new(rt).unwrap();
                for (x, d) in exact_drift(&c, k) {
                    assert!(d >= 2.0 * k.alpha / k.rho_tilde - 1e-12, "n={n} j={j} ρ̃={rt} state {x}: {d}");
                }
            }
        }
    }

    #[test]
    fn start_inside_b_gives_zero() {
        let c = chain(4, 1);
        let rev = reverse_chain(&c, true);
        let k = DriftConstants::new(2.0).unwrap();
        let mut rng = replica_rng(1, 1);
        let s = simulate_reversed_until_w(&rev, StartLaw::State(0), 5.0, k, &mut rng).unwrap();
        assert_eq!(s.w, 0.0);
        assert!(!s.censored);
        assert!(simulate_reversed_until_w(&c, StartLaw::Stationary, 5.0, k, &mut rng).is_err());
    }

    #[test]
    fn w_agreement_is_exact() {
        let times = [0.0, 0.5, 1.0, 2.0];
        let trivial = forward_reverse_w_agreement(&chain(3, 0), &times).unwrap();
        assert!(trivial.max_difference <= 1e-10);
        for (n, j) in [(3, 1), (4, 1)] {
            let c = chain(n, j);
            let a = forward_reverse_w_agreement(&c, &times).unwrap();
            assert!(a.max_difference <= 1e-10, "n={n} j={j}: {}", a.max_difference);
            let outside: f64 = c.stationary_f64().iter().zip(c.b_set()).filter(|(_, b)| !b).map(|(p, _)| p).sum();
            assert!((a.forward[0] - outside).abs() < 1e-15 && (a.reversed[0] - outside).abs() < 1e-15);
            assert!(a.forward[3] > 0.0 && a.forward[3] < a.forward[1]);
            for (s, r) in a.suppressed.iter().zip(&a.reversed) {
                assert!(s >= &(r - 1e-12));
            }
        }
    }

    #[test]
    fn simulated_survival_matches_uniformization() {
        let c = chain(4, 1);
        let rev = reverse_chain(&c, true);
        let exact = absorbed_survival(&rev, &[1.0]).unwrap()[0];
        let k = DriftConstants::from_density(0.75, 1.0).unwrap();
        let samples = sample_w(&rev, StartLaw::Stationary, 1.0, k, 40_000, 11).unwrap();
        let hits: Vec<f64> = samples.iter().map(|s| f64::from(s.censored)).collect();
        let (p, se) = mean_and_se(&hits);
        assert!((p - exact).abs() < 4.0 * se, "{p} vs {exact}");
    }

    #[test]
    fn reversed_w_tail_is_exponential() {
        let c = chain(4, 1);
        let rev = reverse_chain(&c, true);
        let k = DriftConstants::from_density(0.75, 1.0).unwrap();
        let samples = sample_w(&rev, StartLaw::Stationary, 200.0, k, 10_000, 3).unwrap();
        let times: Vec<f64> = samples.iter().map(|s| s.w).collect();
        let cens: Vec<bool> = samples.iter().map(|s| s.censored).collect();
        let opts = crate::stats::TailFitOptions { r2_threshold: 0.95, ..Default::default() };
        let fit = crate::stats::fit_exponential_tail(&times, &cens, opts).unwrap();
        assert!(fit.r_squared > 0.95, "{fit:?}");
    }

    #[test]
    fn mean_drift_of_stopped_y_is_non_negative() {
        let rev = reverse_chain(&chain(4, 1), true);
        let k = DriftConstants::from_density(0.75, 1.0).unwrap();
        let samples = sample_w(&rev, StartLaw::Stationary, 2.0, k, 10_000, 17).unwrap();
        let d = drift_summary(&samples, 2.0).unwrap();
        assert!(d.non_negative, "{d:?}");
        for s in &samples {
            let id = k.cumulative(s.m_path.last().map_or(0, |p| p.1).max(1)) + s.jumps;
            if !s.m_path.is_empty() {
                assert!((s.u_final - id).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let rev = reverse_chain(&chain(4, 1), true);
        let k = DriftConstants::new(5.0).unwrap();
        let a = sample_w(&rev, StartLaw::Stationary, 3.0, k, 200, 9).unwrap();
        let b = sample_w(&rev, StartLaw::Stationary, 3.0, k, 200, 9).unwrap();
        assert_eq!(a, b);
        let csv = w_samples_csv(&a);
        assert!(csv.starts_with("replica,W,censored,mean_drift,B_final,M_max\n"));
        assert_eq!(csv.lines().count(), 201);
    }

    #[test]
    fn occupation_reversal_inequality() {
        let c = chain(3, 1);
        let sure = occupation_reversal_check(&c, 0.0, 1, 1.0, 200, 1).unwrap();
        assert!(sure.forward.iter().chain(&sure.reversed).all(|p| p.0 == 1.0));
        assert!(sure.c >= 1.0 && sure.holds);
        let chk = occupation_reversal_check(&chain(3, 0), 0.2, 1, 1.0, 100_000, 2).unwrap();
        assert!(chk.holds, "{chk:?}");
        assert!(occupation_reversal_check(&c, 0.2, 1, 1.0, 10, 2).is_err());
    }

    proptest! {
        #[test]
        fn weights_are_monotone(rt in 0.1f64..500.0, k in 2u32..200) {
            let c = DriftConstants::new(rt).unwrap();
            prop_assert!(c.weight(k) < 0.0);
            prop_assert!(c.cumulative(k + 1) <= c.cumulative(k));
            prop_assert!(c.jump_size(k + 1, 1) <= 0.0);
        }
    }
}
