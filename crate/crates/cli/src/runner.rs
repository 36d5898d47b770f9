//! Dispatch of resolved configurations to the library.

use std::time::Instant;

use serde_json::{json, Value};
use zrp_core::coupling::{complete_graph_start, estimate_relaxation, runs_to_csv, sample_coupling_times, CouplingOptions};
use zrp_core::flow::{
    check_pair_conservation, comparison_certificate, edge_loads, end_to_end, induced_flow_check, CERTIFICATE_CSV_HEADER,
};
use zrp_core::model::{space_size, Configuration, GraphSpec};
use zrp_core::reversal::{
    balance_report, build_zeta_chain, closed_form_mismatches, drift_summary, forward_reverse_w_agreement,
    rate_structure_check, reverse_chain, sample_w, w_samples_csv, DriftConstants, StartLaw,
};
use zrp_core::seed::replica_rng;
use zrp_core::spectral::{
    build_generator, exact_gap, exact_gap_with, time_grid, tv_curve, wilson_bound, EstimateMode, LanczosOptions,
    SolverChoice, WilsonOptions,
};
use zrp_core::stats::{
    default_skellam_grid, empty_probability_exact, estimate_empty_time_constant, pooled_empty_fraction,
    rw_no_return_probability, skellam_csv, skellam_table, skellam_tail, TailFitOptions,
};

use crate::config::{Command, Density, ResolvedConfig, Solver};
use crate::error::{CliError, Result};
use crate::manifest::{write_outputs, RunManifest, Timing};
use crate::sweep::run_sweep;

/// Spaces up to this size get an exact gap alongside Monte Carlo output.
const EXACT_SIDE_LIMIT: u128 = 200_000;
/// Replicas used to estimate the empty-time constant when none is given.
const C_PARAM_REPLICAS: usize = 2_000;

/// Files and the text echoed to stdout.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub stdout: String,
    pub timings: Vec<Timing>,
    pub errors: Vec<String>,
    /// Number of sweep points, when sweeping.
    pub points: Option<usize>,
}

impl Outputs {
    pub(crate) fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        if self.stdout.is_empty() {
            self.stdout = text.clone();
        }
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    pub(crate) fn text(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body.into_bytes()));
    }

    pub(crate) fn timed<T>(&mut self, op: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f();
        self.timings.push(Timing { operation: op.to_string(), seconds: t0.elapsed().as_secs_f64() });
        out
    }
}

fn graph(cfg: &ResolvedConfig) -> Result<&GraphSpec> {
    cfg.graph.as_ref().ok_or_else(|| CliError::Config(format!("{} needs a graph", cfg.command.name())))
}

fn density(cfg: &ResolvedConfig) -> Result<&Density> {
    cfg.density.as_ref().ok_or_else(|| CliError::Config(format!("{} needs r or rho", cfg.command.name())))
}

fn seed(cfg: &ResolvedConfig) -> Result<u64> {
    cfg.seed.ok_or_else(|| CliError::Config(format!("{} needs --seed", cfg.command.name())))
}

fn zeta_n(cfg: &ResolvedConfig) -> Result<usize> {
    cfg.zeta_n.ok_or_else(|| CliError::Config(format!("{} needs n", cfg.command.name())))
}

pub fn solver_choice(s: Solver) -> SolverChoice {
    match s {
        Solver::Auto => SolverChoice::Auto,
        Solver::Dense => SolverChoice::Dense,
        Solver::Iterative => SolverChoice::Iterative,
    }
}

fn exact_gap_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let (g, d) = (graph(cfg)?, density(cfg)?);
    let gen = out.timed("build_generator", || Ok(build_generator(g, d.r)?))?;
    let opts = LanczosOptions { tolerance: cfg.tolerance, ..LanczosOptions::default() };
    let rep = out.timed("exact_gap", || Ok(exact_gap_with(&gen, solver_choice(cfg.solver), opts)?))?;
    out.json(
        "exact-gap.json",
        &json!({
            "graph": g, "density": d, "dimension": rep.dimension, "gap": rep.gap,
            "relaxation_time": rep.relaxation_time, "method": rep.method, "residual": rep.residual,
        }),
    )
}

fn tv_curve_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let (g, d) = (graph(cfg)?, density(cfg)?);
    let gen = out.timed("build_generator", || Ok(build_generator(g, d.r)?))?;
    let start = Configuration::stacked(g.vertex_count(), 0, d.r as u32);
    let curve = out.timed("tv_curve", || Ok(tv_curve(&gen, &start, &time_grid(cfg.t_max, cfg.steps))?))?;
    let gap = out.timed("exact_gap", || Ok(exact_gap(&gen)?.gap))?;
    let slope = curve.decay_rate(cfg.t_max / 2.0, cfg.t_max).ok();
    out.json(
        "tv-curve.json",
        &json!({
            "graph": g, "density": d, "start": start, "gap": gap, "late_slope": slope,
            "window": [cfg.t_max / 2.0, cfg.t_max], "non_increasing": curve.is_non_increasing(1e-10),
        }),
    )?;
    out.text("tv-curve.csv", curve.to_csv());
    Ok(())
}

fn wilson_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let (g, d) = (graph(cfg)?, density(cfg)?);
    let mut rng = replica_rng(seed(cfg)?, 0);
    let opts = WilsonOptions { samples: cfg.samples, ..WilsonOptions::default() };
    let b = out.timed("wilson_bound", || Ok(wilson_bound(g, d.r, cfg.kind.into(), opts, &mut rng)?))?;
    let gap = if b.mode == EstimateMode::Exact {
        Some(out.timed("exact_gap", || Ok(exact_gap(&build_generator(g, d.r)?)?.gap))?)
    } else {
        None
    };
    let l = g.side().unwrap_or(g.vertex_count()) as f64;
    let normalized = b.quotient * (d.rho() + 1.0).powi(2) * l * l;
    out.json(
        "wilson.json",
        &json!({
            "graph": g, "density": d, "bound": b, "exact_gap": gap,
            "quotient_at_least_gap": gap.map(|x| b.quotient >= x - 1e-12), "normalized": normalized,
        }),
    )
}

fn flow_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let g = graph(cfg)?;
    let loads = out.timed("edge_loads", || Ok(edge_loads(g)?))?;
    let pairs = out.timed("pair_conservation", || Ok(check_pair_conservation(g)?))?;
    let cert = out.timed("certificate", || Ok(comparison_certificate(g, None)?))?;
    let row = cert.csv_row();
    out.text("flow.csv", format!("{CERTIFICATE_CSV_HEADER}\n{row}\n"));
    out.json(
        "flow.json",
        &json!({
            "graph": g, "max_directed": loads.max_directed.to_string(), "max_undirected": loads.max_undirected.to_string(),
            "load_bound": loads.load_bound.to_string(), "within_bound": loads.within_bound(),
            "all_equal": loads.all_equal, "conserved_pairs": pairs, "certificate": cert,
        }),
    )?;
    out.stdout = format!("{row}\n");
    Ok(())
}

fn certificate_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let (g, d) = (graph(cfg)?, density(cfg)?);
    let e = out.timed("end_to_end", || Ok(end_to_end(g, d.r)?))?;
    let induced = out.timed("induced_flow", || Ok(induced_flow_check(g, d.r)))?;
    let induced = match induced {
        Ok(c) => json!(c),
        Err(err) => {
            out.errors.push(format!("induced flow check: {err}"));
            Value::Null
        }
    };
    out.text("certificate.csv", format!("{CERTIFICATE_CSV_HEADER}\n{}\n", e.certificate.csv_row()));
    out.json("certificate.json", &json!({ "graph": g, "density": d, "end_to_end": e, "induced_flow": induced }))
}

fn couple_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let (g, d) = (graph(cfg)?, density(cfg)?);
    let seed = seed(cfg)?;
    let horizon = cfg.horizon.unwrap_or(f64::INFINITY);
    let x0 = complete_graph_start(g, d.r)?;
    let runs = out.timed("sample_coupling_times", || {
        Ok(sample_coupling_times(&x0, cfg.replicas, seed, CouplingOptions::with_horizon(horizon))?)
    })?;
    let estimate = out.timed("estimate_relaxation", || Ok(estimate_relaxation(&runs, TailFitOptions { seed, ..Default::default() })))?;
    let estimate = match estimate {
        Ok(e) => json!(e),
        Err(err) => {
            out.errors.push(format!("relaxation estimate: {err}"));
            Value::Null
        }
    };
    let tau2 = if space_size(g.vertex_count(), d.r).is_some_and(|s| s <= EXACT_SIDE_LIMIT) {
        Some(out.timed("exact_gap", || Ok(exact_gap(&build_generator(g, d.r)?)?.relaxation_time))?)
    } else {
        None
    };
    let censored = runs.iter().filter(|r| r.censored).count();
    out.json(
        "couple.json",
        &json!({
            "graph": g, "density": d, "start": x0, "replicas": cfg.replicas, "seed": seed, "horizon": horizon,
            "censored": censored, "estimate": estimate, "exact_relaxation_time": tau2,
        }),
    )?;
    out.text("couple.csv", runs_to_csv(&runs));
    Ok(())
}

fn zeta_balance_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let n = zeta_n(cfg)?;
    let chain = out.timed("build_zeta_chain", || Ok(build_zeta_chain(n, cfg.j, cfg.rule.into())?))?;
    let report = out.timed("balance_residuals", || Ok(balance_report(&chain)))?;
    let mismatches = out.timed("closed_form", || Ok(closed_form_mismatches(&chain)?))?;
    let bounds = out.timed("rate_bounds", || Ok(rate_structure_check(&chain)?))?;
    let involution = reverse_chain(&reverse_chain(&chain, false), false) == chain;
    out.json(
        "zeta-balance.json",
        &json!({
            "balance": report, "closed_form_mismatches": mismatches, "rate_bounds": bounds,
            "rate_bounds_hold": bounds.holds(), "involution": involution,
        }),
    )
}

fn reversal_w_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let n = zeta_n(cfg)?;
    let chain = out.timed("build_zeta_chain", || Ok(build_zeta_chain(n, cfg.j, cfg.rule.into())?))?;
    let a = out.timed("w_agreement", || Ok(forward_reverse_w_agreement(&chain, &cfg.times)?))?;
    out.json("reversal-w.json", &json!({ "n": n, "j": cfg.j, "rule": cfg.rule, "states": chain.len(), "agreement": a }))
}

fn drift_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let n = zeta_n(cfg)?;
    let seed = seed(cfg)?;
    let horizon = cfg.horizon.unwrap_or(2.0);
    let chain = out.timed("build_zeta_chain", || Ok(build_zeta_chain(n, cfg.j, cfg.rule.into())?))?;
    let rev = reverse_chain(&chain, true);
    let (c_param, c_source) = match cfg.c_param {
        Some(c) => (c, json!("config")),
        None => {
            let est = out.timed("estimate_c_param", || {
                Ok(estimate_empty_time_constant(&[(n, cfg.j + 2)], cfg.m_param, C_PARAM_REPLICAS, seed)?)
            })?;
            if est.c_hat.is_nan() || est.c_hat <= 0.0 {
                return Err(CliError::Config(format!("estimated empty-time constant {} is not positive", est.c_hat)));
            }
            (est.c_hat, json!(est))
        }
    };
    let rho = (cfg.j + 2) as f64 / n as f64;
    let constants = DriftConstants::from_density(rho, c_param)?;
    let samples =
        out.timed("sample_w", || Ok(sample_w(&rev, StartLaw::Stationary, horizon, constants, cfg.replicas, seed)?))?;
    let summary = drift_summary(&samples, horizon)?;
    out.json(
        "drift.json",
        &json!({
            "n": n, "j": cfg.j, "rho": rho, "c_param": c_param, "c_source": c_source,
            "constants": constants, "summary": summary,
        }),
    )?;
    out.text("drift.csv", w_samples_csv(&samples));
    Ok(())
}

fn occupancy_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let (g, d) = (graph(cfg)?, density(cfg)?);
    let horizon = cfg.horizon.unwrap_or(1e4);
    let n = g.vertex_count();
    let pooled = out.timed("pooled_empty_fraction", || Ok(pooled_empty_fraction(n, d.r, horizon, cfg.replicas, seed(cfg)?)?))?;
    let exact = empty_probability_exact(n, d.r)?;
    out.json("occupancy.json", &json!({ "graph": g, "density": d, "pooled": pooled, "exact": exact.to_string() }))
}

fn tails_cmd(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let seed = seed(cfg)?;
    let (lambdas, alphas) = default_skellam_grid();
    let rows = out.timed("skellam_table", || Ok(skellam_table(&lambdas, &alphas)?))?;
    let min = rows.iter().map(|r| r.exponent).fold(f64::INFINITY, f64::min);
    let no_return = out.timed("no_return", || {
        (1..=cfg.r_max).map(|r| Ok(rw_no_return_probability(r, cfg.replicas, seed)?)).collect::<Result<Vec<_>>>()
    })?;
    let scaled_min = no_return.iter().map(|e| e.scaled).fold(f64::INFINITY, f64::min);
    out.json(
        "tails.json",
        &json!({
            "skellam_tail_1_0": skellam_tail(1.0, 0)?, "grid_min_exponent": min,
            "no_return": no_return, "min_scaled_no_return": scaled_min,
        }),
    )?;
    out.text("tails-skellam.csv", skellam_csv(&rows));
    Ok(())
}

/// Runs one resolved configuration, writes its outputs and manifest.
pub fn run(cfg: &ResolvedConfig) -> Result<(RunManifest, String)> {
    let mut out = Outputs::default();
    match cfg.command {
        Command::ExactGap => exact_gap_cmd(cfg, &mut out)?,
        Command::TvCurve => tv_curve_cmd(cfg, &mut out)?,
        Command::Wilson => wilson_cmd(cfg, &mut out)?,
        Command::Flow => flow_cmd(cfg, &mut out)?,
        Command::Certificate => certificate_cmd(cfg, &mut out)?,
        Command::Couple => couple_cmd(cfg, &mut out)?,
        Command::ZetaBalance => zeta_balance_cmd(cfg, &mut out)?,
        Command::ReversalW => reversal_w_cmd(cfg, &mut out)?,
        Command::Drift => drift_cmd(cfg, &mut out)?,
        Command::Occupancy => occupancy_cmd(cfg, &mut out)?,
        Command::Tails => tails_cmd(cfg, &mut out)?,
        Command::Sweep => run_sweep(cfg, &mut out)?,
    }
    let partial = cfg.command == Command::Sweep && !out.errors.is_empty();
    let outputs = write_outputs(&cfg.out, &out.files)?;
    let manifest = RunManifest {
        tool: "zrp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        timings: out.timings,
        outputs,
        partial,
        sweep_points: out.points,
        errors: out.errors,
    };
    manifest.write(&cfg.out)?;
    Ok((manifest, out.stdout))
}

impl RunManifest {
    /// `Err(PartialSweep)` when some sweep points failed.
    pub fn status(&self) -> Result<()> {
        if self.partial {
            let total = self.sweep_points.unwrap_or(self.errors.len());
            return Err(CliError::PartialSweep { failed: self.errors.len(), total });
        }
        Ok(())
    }
}
