//! Experiment configuration: a JSON document merged with command-line
//! flags, then resolved so that every default is explicit.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use num_rational::Rational64;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use zrp_core::coupling::default_horizon;
use zrp_core::model::GraphSpec;
use zrp_core::reversal::ExitRule;
use zrp_core::spectral::TestFunctionKind;

use crate::error::{CliError, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ZRP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "zrp-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    ExactGap,
    TvCurve,
    Wilson,
    Flow,
    Certificate,
    Couple,
    ZetaBalance,
    ReversalW,
    Drift,
    Occupancy,
    Tails,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ExactGap => "exact-gap",
            Command::TvCurve => "tv-curve",
            Command::Wilson => "wilson",
            Command::Flow => "flow",
            Command::Certificate => "certificate",
            Command::Couple => "couple",
            Command::ZetaBalance => "zeta-balance",
            Command::ReversalW => "reversal-w",
            Command::Drift => "drift",
            Command::Occupancy => "occupancy",
            Command::Tails => "tails",
            Command::Sweep => "sweep",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Command::Wilson | Command::Couple | Command::Drift | Command::Occupancy | Command::Tails)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Torus,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WilsonKind {
    Torus,
    Paper,
}

impl From<WilsonKind> for TestFunctionKind {
    fn from(k: WilsonKind) -> Self {
        match k {
            WilsonKind::Torus => TestFunctionKind::WilsonTorus,
            WilsonKind::Paper => TestFunctionKind::WilsonPaper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Balanced,
    AsPrinted,
}

impl From<Rule> for ExitRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Balanced => ExitRule::Balanced,
            Rule::AsPrinted => ExitRule::AsPrinted,
        }
    }
}

/// Every field is optional; flags override the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON configuration file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub graph: Option<Family>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub l: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Density as an integer, decimal or `p/q`; resolved to `r = round(ρ|V|)`.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, value_enum)]
    pub solver: Option<Solver>,
    /// Lanczos residual tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<WilsonKind>,
    /// Monte Carlo samples for the Wilson quotient on large spaces.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Stage index of the ζ chain (`j + 2` particles).
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long, value_enum)]
    pub rule: Option<Rule>,
    /// Time grid for `reversal-w`.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    #[arg(long)]
    pub c_param: Option<f64>,
    #[arg(long)]
    pub m_param: Option<f64>,
    /// Largest `r` for the no-return table of `tails`.
    #[arg(long)]
    pub r_max: Option<usize>,
    #[arg(long = "Ls", value_delimiter = ',')]
    #[serde(rename = "Ls")]
    pub ls: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub ds: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub rhos: Option<Vec<String>>,
    /// Subcommand evaluated at every sweep point.
    #[arg(long, value_enum)]
    pub target: Option<Command>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn merged(mut self, flags: &ExperimentConfig) -> Self {
        overlay!(
            self, flags, graph, d, l, n, r, rho, replicas, seed, horizon, solver, tolerance, t_max, steps, kind,
            samples, j, rule, times, c_param, m_param, r_max, ls, ds, rhos, target, out
        );
        self
    }
}

/// Parses an integer, a decimal or `p/q` exactly.
pub fn parse_rho(text: &str) -> Result<Rational64> {
    let bad = || CliError::Config(format!("cannot parse density {text:?}"));
    let t = text.trim();
    let q = if let Some((int, frac)) = t.split_once('.') {
        if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10i64.pow(frac.len() as u32);
        let whole = if int.is_empty() { 0 } else { int.parse::<i64>().map_err(|_| bad())? };
        let part = if frac.is_empty() { 0 } else { frac.parse::<i64>().map_err(|_| bad())? };
        Rational64::new(whole * den + part, den)
    } else {
        Rational64::from_str(t).map_err(|_| bad())?
    };
    if q < Rational64::from_integer(0) {
        return Err(bad());
    }
    Ok(q)
}

/// `r = round(ρ v)`, halves rounded up.
pub fn particles_for_density(rho: Rational64, v: usize) -> usize {
    let x = rho * Rational64::from_integer(v as i64);
    (x + Rational64::new(1, 2)).floor().to_integer() as usize
}

/// Requested and resolved density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub requested: Option<String>,
    pub r: usize,
    /// `r / |V|` as `p/q`.
    pub effective: String,
    pub effective_decimal: f64,
}

impl Density {
    pub fn resolve(r: Option<usize>, rho: Option<&str>, v: usize) -> Result<Self> {
        let r = match (r, rho) {
            (Some(_), Some(_)) => return Err(CliError::Config("give exactly one of r and rho".into())),
            (None, None) => return Err(CliError::Config("one of r and rho is required".into())),
            (Some(r), None) => r,
            (None, Some(t)) => particles_for_density(parse_rho(t)?, v),
        };
        let eff = Rational64::new(r as i64, v as i64);
        Ok(Density {
            requested: rho.map(str::to_string),
            r,
            effective: format!("{}/{}", eff.numer(), eff.denom()),
            effective_decimal: eff.to_f64().unwrap_or(f64::NAN),
        })
    }

    pub fn rho(&self) -> f64 {
        self.effective_decimal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(rename = "Ls")]
    pub ls: Vec<usize>,
    pub ds: Vec<usize>,
    pub rhos: Vec<String>,
    pub target: Command,
}

/// Fully resolved configuration; echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub command: Command,
    pub graph: Option<GraphSpec>,
    /// Vertex count of the ζ chain.
    pub zeta_n: Option<usize>,
    pub density: Option<Density>,
    pub replicas: usize,
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub solver: Solver,
    pub tolerance: f64,
    pub t_max: f64,
    pub steps: usize,
    pub kind: WilsonKind,
    pub samples: usize,
    pub j: usize,
    pub rule: Rule,
    pub times: Vec<f64>,
    pub c_param: Option<f64>,
    pub m_param: f64,
    pub r_max: usize,
    pub sweep: Option<SweepGrid>,
    pub out: PathBuf,
}

fn default_replicas(command: Command) -> usize {
    match command {
        Command::Couple | Command::Drift => 10_000,
        Command::Occupancy => 8,
        Command::Tails => 100_000,
        _ => 0,
    }
}

fn resolve_graph(cfg: &ExperimentConfig) -> Result<GraphSpec> {
    let family = cfg.graph.unwrap_or(if cfg.n.is_some() { Family::Complete } else { Family::Torus });
    let g = match family {
        Family::Torus => {
            let l = cfg.l.ok_or_else(|| CliError::Config("torus needs L".into()))?;
            GraphSpec::torus(cfg.d.unwrap_or(1), l)
        }
        Family::Complete => GraphSpec::complete(cfg.n.ok_or_else(|| CliError::Config("complete graph needs n".into()))?),
    };
    g.map_err(|e| CliError::Config(e.to_string()))
}

impl ResolvedConfig {
    pub fn resolve(command: Command, cfg: &ExperimentConfig) -> Result<Self> {
        if command.is_stochastic() && cfg.seed.is_none() {
            return Err(CliError::Config(format!("{} is stochastic and needs --seed", command.name())));
        }
        let needs_graph = matches!(
            command,
            Command::ExactGap | Command::TvCurve | Command::Wilson | Command::Flow | Command::Certificate | Command::Couple | Command::Occupancy
        );
        let graph = if needs_graph { Some(resolve_graph(cfg)?) } else { None };
        let needs_density =
            matches!(command, Command::ExactGap | Command::TvCurve | Command::Wilson | Command::Certificate | Command::Couple | Command::Occupancy);
        let density = match &graph {
            Some(g) if needs_density => Some(Density::resolve(cfg.r, cfg.rho.as_deref(), g.vertex_count())?),
            _ => None,
        };
        if matches!(command, Command::Couple | Command::Occupancy) && !matches!(graph, Some(GraphSpec::Complete { .. })) {
            return Err(CliError::Config(format!("{} runs on the complete graph", command.name())));
        }
        if matches!(command, Command::ZetaBalance | Command::ReversalW | Command::Drift) && cfg.n.is_none() {
            return Err(CliError::Config(format!("{} needs n", command.name())));
        }
        let replicas = cfg.replicas.unwrap_or_else(|| default_replicas(command));
        let horizon = match command {
            Command::Couple => Some(cfg.horizon.unwrap_or_else(|| default_horizon(density.as_ref().map_or(0.0, Density::rho), replicas))),
            Command::Drift => Some(cfg.horizon.unwrap_or(2.0)),
            Command::Occupancy => Some(cfg.horizon.unwrap_or(1e4)),
            _ => cfg.horizon,
        };
        let sweep = (command == Command::Sweep).then(|| SweepGrid {
            ls: cfg.ls.clone().unwrap_or_else(|| vec![3, 4, 5, 6]),
            ds: cfg.ds.clone().unwrap_or_else(|| vec![1]),
            rhos: cfg.rhos.clone().unwrap_or_else(|| vec!["1/3".into(), "1".into(), "2".into()]),
            target: cfg.target.unwrap_or(Command::ExactGap),
        });
        if let Some(s) = &sweep {
            if !matches!(s.target, Command::ExactGap | Command::Wilson | Command::Certificate) {
                return Err(CliError::Config(format!("sweep target {} is not supported", s.target.name())));
            }
            if s.target == Command::Wilson && cfg.seed.is_none() {
                return Err(CliError::Config("a wilson sweep needs --seed".into()));
            }
            for r in &s.rhos {
                parse_rho(r)?;
            }
        }
        let out = cfg
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok(ResolvedConfig {
            command,
            graph,
            zeta_n: if needs_graph { None } else { cfg.n },
            density,
            replicas,
            seed: cfg.seed,
            horizon,
            solver: cfg.solver.unwrap_or(Solver::Auto),
            tolerance: cfg.tolerance.unwrap_or(1e-10),
            t_max: cfg.t_max.unwrap_or(10.0),
            steps: cfg.steps.unwrap_or(100),
            kind: cfg.kind.unwrap_or(WilsonKind::Torus),
            samples: cfg.samples.unwrap_or(200_000),
            j: cfg.j.unwrap_or(1),
            rule: cfg.rule.unwrap_or(Rule::Balanced),
            times: cfg.times.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]),
            c_param: cfg.c_param,
            m_param: cfg.m_param.unwrap_or(1.0),
            r_max: cfg.r_max.unwrap_or(8),
            sweep,
            out,
        })
    }
}
