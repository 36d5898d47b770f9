use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zrp_cli::{run, CliError, Command, ExperimentConfig, ResolvedConfig};

/// Spectral gap, comparison, coupling and reversal experiments for the
/// constant-rate zero range process.
#[derive(Parser)]
#[command(name = "zrp", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Exact spectral gap and relaxation time.
    ExactGap(ExperimentConfig),
    /// Total variation distance to uniform over time.
    TvCurve(ExperimentConfig),
    /// Rayleigh quotient of the Wilson test function.
    Wilson(ExperimentConfig),
    /// Edge loads of the shortest-path flow and the comparison certificate.
    Flow(ExperimentConfig),
    /// Comparison inequality with exact relaxation times.
    Certificate(ExperimentConfig),
    /// Coupling times and the tail-rate relaxation estimate.
    Couple(ExperimentConfig),
    /// Balance residuals, reversal and rate bounds of the ζ chain.
    ZetaBalance(ExperimentConfig),
    /// Exact survival of W for the ζ chain and its reversal.
    ReversalW(ExperimentConfig),
    /// Drift of the stopped Y process in the reversed ζ chain.
    Drift(ExperimentConfig),
    /// Long-run empty fraction on the complete graph.
    Occupancy(ExperimentConfig),
    /// Skellam tail table and random-walk no-return probabilities.
    Tails(ExperimentConfig),
    /// Grid over d, L and density.
    Sweep(ExperimentConfig),
}

fn split(sub: Sub) -> (Command, ExperimentConfig) {
    match sub {
        Sub::ExactGap(c) => (Command::ExactGap, c),
        Sub::TvCurve(c) => (Command::TvCurve, c),
        Sub::Wilson(c) => (Command::Wilson, c),
        Sub::Flow(c) => (Command::Flow, c),
        Sub::Certificate(c) => (Command::Certificate, c),
        Sub::Couple(c) => (Command::Couple, c),
        Sub::ZetaBalance(c) => (Command::ZetaBalance, c),
        Sub::ReversalW(c) => (Command::ReversalW, c),
        Sub::Drift(c) => (Command::Drift, c),
        Sub::Occupancy(c) => (Command::Occupancy, c),
        Sub::Tails(c) => (Command::Tails, c),
        Sub::Sweep(c) => (Command::Sweep, c),
    }
}

fn execute(command: Command, flags: ExperimentConfig) -> Result<(), CliError> {
    let base = match &flags.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = ResolvedConfig::resolve(command, &base.merged(&flags))?;
    let (manifest, stdout) = run(&cfg)?;
    std::io::stdout().write_all(stdout.as_bytes())?;
    manifest.status()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, flags) = split(cli.command);
    match execute(command, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zrp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
