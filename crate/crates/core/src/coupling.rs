//! Ranked-particle coupling of two copies of the process on the complete
//! graph, run in stages.
//!
//! Ranks are 0-based here: rank 0 is the highest. Stage `j` couples ranks
//! `0..=j`, assuming ranks `0..j` already sit at identical positions in
//! both copies.
//!
//! * Step 1 applies identical draws to both copies. It ends when the number
//!   of ranks `< j` sharing a vertex with rank `j` agrees across copies; with
//!   `a`, `b` the positions of rank `j` in the two copies this reads
//!   `x(a, j) = y(b, j)`.
//! * Step 2 re-ranks `x` at `a` and `b` so that, for ranks `<= j`, the rank
//!   set at `v` in `x` equals the rank set at `σ(v)` in `y`, where `σ`
//!   swaps `a` and `b`. Draws are then mirrored through `σ`. It ends when
//!   `x(a, j+1) = x(b, j+1)`, at which point both prefix configurations agree.
//!
//! Events are generated at total rate `n`: a uniform vertex rings and picks
//! a uniform destination among the other `n - 1`. A ring at an empty vertex
//! is a failed attempt. Once the full configurations coincide both copies
//! receive identical draws forever, so the recorded time is the first
//! meeting time.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZrpError};
use crate::model::{sample_uniform, Configuration, GraphSpec, RankedState, Vertex};
use crate::seed::{derive_seed, replica_rng};
use crate::stats::{fit_exponential_tail, TailFit, TailFitOptions};

/// Which half of a stage is running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    One,
    /// The swap step, with `a` and `b` the positions of the stage rank in
    /// `x` and `y` when Step 1 finished.
    Two { a: Vertex, b: Vertex },
}

impl Step {
    fn index(self) -> usize {
        match self {
            Step::One => 0,
            Step::Two { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Stage { j: usize, step: Step },
    Coalesced,
}

/// One uniformized event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventDraw {
    pub ring: Vertex,
    pub dest: Vertex,
    pub dt: f64,
}

/// Draws the next event for `n` vertices at total rate `n`.
pub fn draw_event<R: Rng + ?Sized>(n: usize, rng: &mut R) -> EventDraw {
    let dt = Exp::new(n as f64).expect("positive rate").sample(rng);
    let ring = rng.random_range(0..n);
    let mut dest = rng.random_range(0..n - 1);
    if dest >= ring {
        dest += 1;
    }
    EventDraw { ring, dest, dt }
}

/// What each copy did on one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventOutcome {
    pub x_ring: Vertex,
    pub y_ring: Vertex,
    pub x_moved: Option<usize>,
    pub y_moved: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    x: RankedState,
    y: RankedState,
    phase: Phase,
    clock: f64,
    events: u64,
    stage_times: Vec<f64>,
    step_times: Vec<[f64; 2]>,
    check_invariants: bool,
}

fn require_coupling_graph(n: usize) -> Result<()> {
    if n < 3 {
        return Err(ZrpError::InvalidArgument(
            "the coupling needs a complete graph with at least 3 vertices; use exact methods for n = 2".into(),
        ));
    }
    Ok(())
}

/// Starts a coupling with `y0` drawn uniformly.
pub fn init_coupling<R: Rng + ?Sized>(x0: &Configuration, rng: &mut R) -> Result<CoupledState> {
    let y0 = sample_uniform(x0.vertex_count(), x0.particles(), rng);
    CoupledState::new(x0, &y0)
}

impl CoupledState {
    /// Both copies ranked in vertex-index order, then stage 0 is entered.
    pub fn new(x0: &Configuration, y0: &Configuration) -> Result<Self> {
        let n = x0.vertex_count();
        require_coupling_graph(n)?;
        if y0.vertex_count() != n || y0.particles() != x0.particles() {
            return Err(ZrpError::InvalidArgument("copies must share vertex and particle counts".into()));
        }
        let r = x0.particles();
        if r == 0 {
            return Err(ZrpError::InvalidArgument("need at least one particle".into()));
        }
        let x = RankedState::from_configuration(x0);
        let y = RankedState::from_configuration(y0);
        let mut s = CoupledState {
            x,
            y,
            phase: Phase::Stage { j: 0, step: Step::One },
            clock: 0.0,
            events: 0,
            stage_times: vec![0.0; r],
            step_times: vec![[0.0; 2]; r],
            check_invariants: cfg!(debug_assertions),
        };
        s.settle();
        Ok(s)
    }

    /// Enables per-event invariant checks (on by default in debug builds).
    pub fn with_invariant_checks(mut self, on: bool) -> Self {
        self.check_invariants = on;
        self
    }

    pub fn x(&self) -> &RankedState {
        &self.x
    }

    pub fn y(&self) -> &RankedState {
        &self.y
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn is_coalesced(&self) -> bool {
        self.phase == Phase::Coalesced
    }

    pub fn stage_times(&self) -> &[f64] {
        &self.stage_times
    }

    pub fn step_times(&self) -> &[[f64; 2]] {
        &self.step_times
    }

    fn n(&self) -> usize {
        self.x.vertex_count()
    }

    fn r(&self) -> usize {
        self.x.particles()
    }

    /// Adds `dt` to the running phase.
    fn charge(&mut self, dt: f64) {
        self.clock += dt;
        if let Phase::Stage { j, step } = self.phase {
            self.stage_times[j] += dt;
            self.step_times[j][step.index()] += dt;
        }
    }

    /// Applies one event. Holding time is charged to the phase that was
    /// running before the jump.
    pub fn advance(&mut self, draw: EventDraw) -> Result<EventOutcome> {
        self.charge(draw.dt);
        self.events += 1;
        let (u, w) = (draw.ring, draw.dest);
        let (yu, yw) = match self.phase {
            Phase::Stage { step: Step::Two { a, b }, .. } => (swap(u, a, b), swap(w, a, b)),
            _ => (u, w),
        };
        let x_moved = self.x.expel(u, w);
        let y_moved = self.y.expel(yu, yw);
        self.settle();
        if self.check_invariants {
            self.check()?;
        }
        Ok(EventOutcome { x_ring: u, y_ring: yu, x_moved, y_moved })
    }

    /// Moves through every phase boundary reached by the current state.
    fn settle(&mut self) {
        if self.phase != Phase::Coalesced && self.configurations_agree() {
            self.y = self.x.clone();
            self.phase = Phase::Coalesced;
            return;
        }
        while let Phase::Stage { j, step } = self.phase {
            let a = self.x.position(j);
            let b = self.y.position(j);
            match step {
                Step::One => {
                    if a == b {
                        self.finish_stage(j);
                    } else if self.x.prefix_count(a, j) == self.y.prefix_count(b, j) {
                        self.enter_step_two(j, a, b);
                        self.phase = Phase::Stage { j, step: Step::Two { a, b } };
                    } else {
                        return;
                    }
                }
                Step::Two { a, b } => {
                    if self.x.prefix_count(a, j + 1) == self.x.prefix_count(b, j + 1) {
                        self.finish_stage(j);
                    } else {
                        return;
                    }
                }
            }
        }
    }

    fn configurations_agree(&self) -> bool {
        (0..self.n()).all(|v| self.x.occupancy(v) == self.y.occupancy(v))
    }

    /// Ranks `0..=j` now occupy the same multiset of vertices in both
    /// copies; re-rank for stage `j + 1`.
    fn finish_stage(&mut self, j: usize) {
        if j + 1 == self.r() {
            self.y = self.x.clone();
            self.phase = Phase::Coalesced;
            return;
        }
        let matched = j + 1;
        let mut common: Vec<Vertex> = self.x.positions()[..matched].to_vec();
        common.sort_unstable();
        self.x.rerank(stage_ranking(&self.x, &common));
        self.y.rerank(stage_ranking(&self.y, &common));
        self.phase = Phase::Stage { j: j + 1, step: Step::One };
    }

    /// Re-ranks `x` at `a` and `b` so its rank set (among ranks `<= j`) at
    /// `a` is `y`'s set at `b`, and vice versa.
    fn enter_step_two(&mut self, j: usize, a: Vertex, b: Vertex) {
        let high = |s: &RankedState, v: Vertex| -> Vec<usize> { s.ranks_at(v).iter().copied().filter(|&k| k <= j).collect() };
        let (xa, xb) = (high(&self.x, a), high(&self.x, b));
        let (ya, yb) = (high(&self.y, a), high(&self.y, b));
        debug_assert_eq!(xa.len(), yb.len());
        debug_assert_eq!(xb.len(), ya.len());
        let mut positions = self.x.positions().to_vec();
        for &k in &yb {
            positions[k] = a;
        }
        for &k in &ya {
            positions[k] = b;
        }
        debug_assert!(xa.iter().chain(&xb).all(|k| yb.contains(k) || ya.contains(k)));
        self.x.rerank(positions);
    }

    /// Checks the coupling invariants for the current phase.
    pub fn check(&self) -> Result<()> {
        let r = self.r();
        if self.x.particles() != r || self.y.particles() != r {
            return Err(ZrpError::InvariantViolation("particle count changed".into()));
        }
        match self.phase {
            Phase::Coalesced => {
                if self.x.configuration() != self.y.configuration() {
                    return Err(ZrpError::InvariantViolation("coalesced copies differ".into()));
                }
            }
            Phase::Stage { j, step: Step::One } => {
                if self.x.positions()[..j] != self.y.positions()[..j] {
                    return Err(ZrpError::InvariantViolation(format!("stage {j} step 1: matched ranks diverged")));
                }
            }
            Phase::Stage { j, step: Step::Two { a, b } } => {
                for v in 0..self.n() {
                    let xs: Vec<usize> = self.x.ranks_at(v).iter().copied().filter(|&k| k <= j).collect();
                    let ys: Vec<usize> = self.y.ranks_at(swap(v, a, b)).iter().copied().filter(|&k| k <= j).collect();
                    if xs != ys {
                        return Err(ZrpError::InvariantViolation(format!(
                            "stage {j} step 2: rank sets at {v} and its mirror differ ({xs:?} vs {ys:?})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn swap(v: Vertex, a: Vertex, b: Vertex) -> Vertex {
    if v == a {
        b
    } else if v == b {
        a
    } else {
        v
    }
}

/// Ranking for a new stage: ranks `0..m` go to the sorted common vertices
/// `common`, the remaining particles follow ordered by (vertex, old rank).
fn stage_ranking(s: &RankedState, common: &[Vertex]) -> Vec<Vertex> {
    let n = s.vertex_count();
    let mut left: Vec<usize> = (0..n).map(|v| s.occupancy(v)).collect();
    for &v in common {
        left[v] -= 1;
    }
    let mut positions = common.to_vec();
    for (v, &k) in left.iter().enumerate() {
        positions.extend(std::iter::repeat_n(v, k));
    }
    positions
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingOptions {
    pub horizon: f64,
    pub check_invariants: bool,
}

impl CouplingOptions {
    pub fn with_horizon(horizon: f64) -> Self {
        CouplingOptions { horizon, check_invariants: cfg!(debug_assertions) }
    }
}

/// `200 (ρ + 1)^2 max(ln replicas, 1)`.
pub fn default_horizon(rho: f64, replicas: usize) -> f64 {
    200.0 * (rho + 1.0).powi(2) * (replicas.max(1) as f64).ln().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    pub replica: u64,
    pub seed: u64,
    /// Coupling time, or the horizon when censored.
    #[serde(rename = "T")]
    pub t: f64,
    pub censored: bool,
    pub stage_times: Vec<f64>,
    pub step_times: Vec<[f64; 2]>,
    pub events: u64,
}

/// Runs until the copies meet or the clock passes `horizon`.
pub fn run_to_coalescence<R: Rng + ?Sized>(mut state: CoupledState, opts: CouplingOptions, rng: &mut R) -> Result<(CoupledState, bool)> {
    state.check_invariants = opts.check_invariants;
    let n = state.n();
    while !state.is_coalesced() {
        let draw = draw_event(n, rng);
        if state.clock + draw.dt > opts.horizon {
            let rest = opts.horizon - state.clock;
            state.charge(rest.max(0.0));
            return Ok((state, true));
        }
        state.advance(draw)?;
    }
    Ok((state, false))
}

/// Runs until time `t` and returns the state there (the copies keep moving
/// after they meet).
pub fn run_until<R: Rng + ?Sized>(mut state: CoupledState, t: f64, rng: &mut R) -> Result<CoupledState> {
    let n = state.n();
    loop {
        let draw = draw_event(n, rng);
        if state.clock + draw.dt > t {
            let rest = t - state.clock;
            state.charge(rest.max(0.0));
            return Ok(state);
        }
        state.advance(draw)?;
    }
}

/// One replica: start `x0`, uniform partner, run to coalescence.
pub fn coupling_replica(x0: &Configuration, master: u64, replica: u64, opts: CouplingOptions) -> Result<CouplingRun> {
    let seed = derive_seed(master, replica);
    let mut rng = replica_rng(master, replica);
    let state = init_coupling(x0, &mut rng)?;
    let (state, censored) = run_to_coalescence(state, opts, &mut rng)?;
    Ok(CouplingRun {
        replica,
        seed,
        t: state.clock(),
        censored,
        stage_times: state.stage_times().to_vec(),
        step_times: state.step_times().to_vec(),
        events: state.events(),
    })
}

/// Independent replicas in replica order; the result does not depend on
/// the number of worker threads.
pub fn sample_coupling_times(x0: &Configuration, replicas: usize, master: u64, opts: CouplingOptions) -> Result<Vec<CouplingRun>> {
    if replicas == 0 {
        return Err(ZrpError::InvalidArgument("need at least one replica".into()));
    }
    require_coupling_graph(x0.vertex_count())?;
    (0..replicas as u64).into_par_iter().map(|i| coupling_replica(x0, master, i, opts)).collect()
}

/// All particles on vertex 0, the default start.
pub fn default_start(n: usize, r: usize) -> Configuration {
    Configuration::stacked(n, 0, r as u32)
}

pub const COUPLING_CSV_PREFIX: &str = "replica,seed,T,censored";

pub fn runs_to_csv(runs: &[CouplingRun]) -> String {
    let stages = runs.first().map_or(0, |r| r.stage_times.len());
    let mut s = String::from(COUPLING_CSV_PREFIX);
    for j in 0..stages {
        s.push_str(&format!(",stage{j}"));
    }
    s.push('\n');
    for run in runs {
        s.push_str(&format!("{},{},{},{}", run.replica, run.seed, run.t, run.censored));
        for t in &run.stage_times {
            s.push_str(&format!(",{t}"));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxationEstimate {
    pub gamma: f64,
    pub relaxation_bound: f64,
    /// Confidence interval for `1/γ̂`.
    pub ci: (f64, f64),
    pub censoring_rate: f64,
    pub samples: usize,
    pub fit: TailFit,
}

/// Minimum number of uncensored samples for a relaxation estimate.
pub const MIN_UNCENSORED: usize = 1000;

/// Fits the exponential tail rate `γ̂` of the coupling times; `1/γ̂`
/// estimates an upper bound on the relaxation time.
pub fn estimate_relaxation(runs: &[CouplingRun], opts: TailFitOptions) -> Result<RelaxationEstimate> {
    let uncensored = runs.iter().filter(|r| !r.censored).count();
    if uncensored < MIN_UNCENSORED {
        return Err(ZrpError::InsufficientSamples(format!("{uncensored} uncensored samples, need {MIN_UNCENSORED}")));
    }
    let times: Vec<f64> = runs.iter().map(|r| r.t).collect();
    let censored: Vec<bool> = runs.iter().map(|r| r.censored).collect();
    let fit = fit_exponential_tail(&times, &censored, opts)?;
    Ok(RelaxationEstimate {
        gamma: fit.rate,
        relaxation_bound: 1.0 / fit.rate,
        ci: (1.0 / fit.rate_ci.1, 1.0 / fit.rate_ci.0),
        censoring_rate: (runs.len() - uncensored) as f64 / runs.len() as f64,
        samples: runs.len(),
        fit,
    })
}

/// Convenience wrapper for a complete graph with `r` particles.
pub fn complete_graph_start(graph: &GraphSpec, r: usize) -> Result<Configuration> {
    match *graph {
        GraphSpec::Complete { n } => {
            require_coupling_graph(n)?;
            Ok(default_start(n, r))
        }
        GraphSpec::Torus { .. } => Err(ZrpError::InvalidArgument("the coupling runs on complete graphs only".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(v: &[u32]) -> Configuration {
        Configuration::new(v.to_vec())
    }

    fn ev(ring: Vertex, dest: Vertex) -> EventDraw {
        EventDraw { ring, dest, dt: 0.1 }
    }

    #[test]
    fn rejects_small_graphs_and_empty_systems() {
        assert!(CoupledState::new(&cfg(&[1, 0]), &cfg(&[0, 1])).is_err());
        assert!(CoupledState::new(&cfg(&[0, 0, 0]), &cfg(&[0, 0, 0])).is_err());
        assert!(CoupledState::new(&cfg(&[1, 0, 0]), &cfg(&[1, 1, 0])).is_err());
    }

    #[test]
    fn single_particle_enters_step_two_at_once() {
        let s = CoupledState::new(&cfg(&[1, 0, 0]), &cfg(&[0, 0, 1])).unwrap();
        assert_eq!(s.phase(), Phase::Stage { j: 0, step: Step::Two { a: 0, b: 2 } });
    }

    #[test]
    fn identical_start_is_coupled() {
        let s = CoupledState::new(&cfg(&[2, 1, 0]), &cfg(&[2, 1, 0])).unwrap();
        assert!(s.is_coalesced());
        assert_eq!(s.clock(), 0.0);
    }

    #[test]
    fn swap_step_mirrors_moves() {
        // x has its particle at 0, y at 2: a = 0, b = 2.
        let mut s = CoupledState::new(&cfg(&[1, 0, 0, 0]), &cfg(&[0, 0, 1, 0])).unwrap().with_invariant_checks(true);
        let out = s.advance(ev(0, 3)).unwrap();
        assert_eq!((out.x_ring, out.y_ring), (0, 2));
        assert_eq!(out.x_moved, Some(0));
        assert_eq!(out.y_moved, Some(0));
        // Both walkers land on 3 and meet.
        assert!(s.is_coalesced());
    }

    /// Hand-executed script on three vertices with two particles.
    ///
    /// Start x = (2,0,0), y = (0,1,1). Ranking by vertex: x ranks 0,1 at 0;
    /// y rank 0 at 1, rank 1 at 2. Stage 0: a = 0, b = 1, and x(a,0) =
    /// y(b,0) = 0, so Step 2 starts immediately with σ = (0 1).
    #[test]
    fn scripted_trajectory() {
        let mut s = CoupledState::new(&cfg(&[2, 0, 0]), &cfg(&[0, 1, 1])).unwrap().with_invariant_checks(true);
        assert_eq!(s.phase(), Phase::Stage { j: 0, step: Step::Two { a: 0, b: 1 } });

        // 1. x: 2 rings, empty (failed). y: σ(2) = 2 rings, rank 1 moves to σ(0) = 1.
        s.advance(ev(2, 0)).unwrap();
        assert_eq!(s.x().configuration(), cfg(&[2, 0, 0]));
        assert_eq!(s.y().configuration(), cfg(&[0, 2, 0]));
        // x(a,1) = 1 vs x(b,1) = 0: still Step 2.
        assert_eq!(s.phase(), Phase::Stage { j: 0, step: Step::Two { a: 0, b: 1 } });

        // 2. x: 0 rings, rank 0 -> 2. y: 1 rings, rank 0 -> 2.
        s.advance(ev(0, 2)).unwrap();
        assert_eq!(s.x().configuration(), cfg(&[1, 0, 1]));
        assert_eq!(s.y().configuration(), cfg(&[0, 1, 1]));
        // x(0,1) = 0 = x(1,1): stage 0 done. Common vertex of rank 0 is 2.
        // Re-rank: x = rank 0 at 2, rank 1 at 0; y = rank 0 at 2, rank 1 at 1.
        assert_eq!(s.x().positions(), &[2, 0]);
        assert_eq!(s.y().positions(), &[2, 1]);
        // Stage 1: a = 0, b = 1, x(0,1) = 0 = y(1,1): Step 2 again.
        assert_eq!(s.phase(), Phase::Stage { j: 1, step: Step::Two { a: 0, b: 1 } });

        // 3. x: 2 rings, rank 0 -> 1. y: 2 rings, rank 0 -> σ(1) = 0.
        s.advance(ev(2, 1)).unwrap();
        assert_eq!(s.x().configuration(), cfg(&[1, 1, 0]));
        assert_eq!(s.y().configuration(), cfg(&[1, 1, 0]));
        assert!(s.is_coalesced());

        // 4. and 5. After meeting both copies take identical moves.
        s.advance(ev(1, 2)).unwrap();
        s.advance(ev(0, 2)).unwrap();
        assert_eq!(s.x().configuration(), cfg(&[0, 0, 2]));
        assert_eq!(s.y().configuration(), cfg(&[0, 0, 2]));
        assert!((s.clock() - 0.5).abs() < 1e-12);
        let total: f64 = s.stage_times().iter().sum();
        assert!((total - 0.3).abs() < 1e-12);
    }

    #[test]
    fn step_one_then_step_two() {
        // x = (2,0,1,0): ranks 0,1 at 0, rank 2 at 2. y = (2,1,0,0): ranks 0,1 at 0, rank 2 at 1.
        // Stage 0: rank 0 at 0 in both, so stage 0 ends; stage 1 likewise.
        // Stage 2: a = 2, b = 1, x(2,2) = 0 = y(1,2): Step 2.
        let s = CoupledState::new(&cfg(&[2, 0, 1, 0]), &cfg(&[2, 1, 0, 0])).unwrap();
        assert_eq!(s.phase(), Phase::Stage { j: 2, step: Step::Two { a: 2, b: 1 } });
        // x = (1,1,0,0) and y = (0,0,1,1) : rank 0 at 0 vs 2.
        let mut s = CoupledState::new(&cfg(&[1, 1, 0, 0]), &cfg(&[0, 0, 1, 1])).unwrap().with_invariant_checks(true);
        assert_eq!(s.phase(), Phase::Stage { j: 0, step: Step::Two { a: 0, b: 2 } });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        while !s.is_coalesced() {
            s.advance(draw_event(4, &mut rng)).unwrap();
        }
        assert_eq!(s.x().configuration(), s.y().configuration());
    }

    #[test]
    fn runs_coalesce_with_consistent_accounting() {
        let x0 = default_start(4, 4);
        let mut opts = CouplingOptions::with_horizon(1e6);
        opts.check_invariants = true;
        for i in 0..300 {
            let run = coupling_replica(&x0, 9, i, opts).unwrap();
            assert!(!run.censored);
            let total: f64 = run.stage_times.iter().sum();
            assert!((total - run.t).abs() < 1e-9 * run.t.max(1.0));
            for (st, steps) in run.stage_times.iter().zip(&run.step_times) {
                assert!(*st >= 0.0);
                assert!((steps[0] + steps[1] - st).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stage_index_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut s = init_coupling(&default_start(5, 6), &mut rng).unwrap().with_invariant_checks(true);
            let mut last = 0;
            while let Phase::Stage { j, .. } = s.phase() {
                assert!(j >= last);
                last = j;
                s.advance(draw_event(5, &mut rng)).unwrap();
            }
        }
    }

    #[test]
    fn censoring_is_flagged() {
        let x0 = default_start(6, 12);
        let run = coupling_replica(&x0, 1, 0, CouplingOptions::with_horizon(1e-3)).unwrap();
        assert!(run.censored);
        assert!((run.t - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn deterministic_given_seed() {
        let x0 = default_start(4, 3);
        let opts = CouplingOptions::with_horizon(1e5);
        let a = sample_coupling_times(&x0, 64, 77, opts).unwrap();
        let b = sample_coupling_times(&x0, 64, 77, opts).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| sample_coupling_times(&x0, 64, 77, opts).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn ringing_vertices_are_exchangeable() {
        // In Step 2 the y-copy rings at σ(u); its ring counts must still be uniform.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 5;
        let mut counts = vec![0usize; n];
        let mut total = 0usize;
        while total < 50_000 {
            let mut s = init_coupling(&default_start(n, 5), &mut rng).unwrap();
            while !s.is_coalesced() {
                let out = s.advance(draw_event(n, &mut rng)).unwrap();
                counts[out.y_ring] += 1;
                total += 1;
            }
        }
        let e = total as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 4 degrees of freedom, 0.999 quantile 18.47.
        assert!(chi2 < 18.47, "chi2 {chi2}");
    }

    #[test]
    fn csv_layout() {
        let x0 = default_start(3, 2);
        let runs = sample_coupling_times(&x0, 2, 1, CouplingOptions::with_horizon(1e4)).unwrap();
        let csv = runs_to_csv(&runs);
        assert!(csv.starts_with("replica,seed,T,censored,stage0,stage1\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn default_horizon_values() {
        assert!((default_horizon(1.0, 1) - 800.0).abs() < 1e-12);
        assert!((default_horizon(1.0, 1000) - 800.0 * 1000f64.ln()).abs() < 1e-9);
    }
}
