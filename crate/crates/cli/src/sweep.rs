//! Parameter sweeps over `(d, L, ρ)` on tori.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use zrp_core::flow::end_to_end;
use zrp_core::model::GraphSpec;
use zrp_core::seed::replica_rng;
use zrp_core::spectral::{build_generator, exact_gap, wilson_bound, TestFunctionKind, WilsonOptions};

use crate::config::{Command, Density, ResolvedConfig};
use crate::error::{CliError, Result};
use crate::runner::Outputs;

pub const SWEEP_CSV_HEADER: &str = "d,L,rho,r,rho_effective,dimension,gap,tau1,normalized,quotient,status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub rho: String,
    pub r: Option<usize>,
    pub rho_effective: Option<String>,
    pub dimension: Option<usize>,
    pub gap: Option<f64>,
    pub tau1: Option<f64>,
    /// `τ₁/((ρ+1)²L²)` for gap and certificate sweeps, `quotient·(ρ+1)²L²` for Wilson sweeps.
    pub normalized: Option<f64>,
    /// Wilson quotient, or the certified bound on `τ₁` for certificate sweeps.
    pub quotient: Option<f64>,
    pub error: Option<String>,
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl SweepRow {
    pub fn csv(&self) -> String {
        let status = match &self.error {
            None => "ok".to_string(),
            Some(e) => format!("error: {}", e.replace([',', '\n'], ";")),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.d,
            self.l,
            self.rho,
            opt(&self.r),
            opt(&self.rho_effective),
            opt(&self.dimension),
            opt(&self.gap),
            opt(&self.tau1),
            opt(&self.normalized),
            opt(&self.quotient),
            status
        )
    }
}

fn evaluate(target: Command, d: usize, l: usize, rho: &str, index: u64, seed: Option<u64>) -> Result<SweepRow> {
    let g = GraphSpec::torus(d, l)?;
    let dens = Density::resolve(None, Some(rho), g.vertex_count())?;
    let scale = (dens.rho() + 1.0).powi(2) * (l * l) as f64;
    let mut row = SweepRow {
        d,
        l,
        rho: rho.to_string(),
        r: Some(dens.r),
        rho_effective: Some(dens.effective.clone()),
        dimension: None,
        gap: None,
        tau1: None,
        normalized: None,
        quotient: None,
        error: None,
    };
    match target {
        Command::ExactGap => {
            let rep = exact_gap(&build_generator(&g, dens.r)?)?;
            row.dimension = Some(rep.dimension);
            row.gap = Some(rep.gap);
            row.tau1 = Some(rep.relaxation_time);
            row.normalized = Some(rep.relaxation_time / scale);
        }
        Command::Wilson => {
            let gen = build_generator(&g, dens.r)?;
            let rep = exact_gap(&gen)?;
            let seed = seed.ok_or_else(|| CliError::Config("a wilson sweep needs --seed".into()))?;
            let mut rng = replica_rng(seed, index);
            let b = wilson_bound(&g, dens.r, TestFunctionKind::WilsonTorus, WilsonOptions::default(), &mut rng)?;
            row.dimension = Some(rep.dimension);
            row.gap = Some(rep.gap);
            row.tau1 = Some(rep.relaxation_time);
            row.quotient = Some(b.quotient);
            row.normalized = Some(b.quotient * scale);
        }
        Command::Certificate => {
            let e = end_to_end(&g, dens.r)?;
            if !(e.bound_holds && e.headline_holds) {
                return Err(CliError::Config(format!("certificate inequality failed at d={d} L={l} rho={rho}")));
            }
            row.tau1 = Some(e.tau1);
            row.quotient = e.certificate.tau1_bound;
            row.normalized = Some(e.tau1 / scale);
        }
        other => return Err(CliError::Config(format!("sweep target {} is not supported", other.name()))),
    }
    Ok(row)
}

/// Evaluates every grid point concurrently; rows come back in grid order
/// (d outermost, then L, then ρ). Failed points become error rows.
pub fn sweep_rows(cfg: &ResolvedConfig) -> Result<Vec<SweepRow>> {
    let grid = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("missing sweep grid".into()))?;
    let points: Vec<(usize, usize, String)> = grid
        .ds
        .iter()
        .flat_map(|&d| grid.ls.iter().flat_map(move |&l| grid.rhos.iter().map(move |r| (d, l, r.clone()))))
        .collect();
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, (d, l, rho))| {
            evaluate(grid.target, *d, *l, rho, i as u64, cfg.seed).unwrap_or_else(|e| SweepRow {
                d: *d,
                l: *l,
                rho: rho.clone(),
                r: None,
                rho_effective: None,
                dimension: None,
                gap: None,
                tau1: None,
                normalized: None,
                quotient: None,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

/// Largest over smallest normalized value among successful rows.
pub fn spread(rows: &[SweepRow]) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.normalized).collect();
    if vals.is_empty() {
        return None;
    }
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max / min)
}

pub(crate) fn run_sweep(cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let rows = out.timed("sweep", || sweep_rows(cfg))?;
    out.points = Some(rows.len());
    for r in &rows {
        if let Some(e) = &r.error {
            out.errors.push(format!("d={} L={} rho={}: {e}", r.d, r.l, r.rho));
        }
    }
    let target = cfg.sweep.as_ref().map(|s| s.target);
    out.json("sweep.json", &json!({ "target": target, "rows": rows, "spread": spread(&rows) }))?;
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    out.text("sweep.csv", csv);
    Ok(())
}
