mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};

/// Exit codes: 0 pass, 1 verification failure, 2 usage/config error,
/// 3 numerical blowup.
#[derive(Parser)]
#[command(name = "collapse-sim", version, about = "Nonlinear collapse-model simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a collapse ensemble on the factored dynamics and write a report.
    Simulate(commands::SimulateArgs),
    /// Integrate the full-space density matrix of a (small) scenario.
    SimulateFull(commands::SimulateFullArgs),
    /// Play the abstract weight-pumping game to ruin.
    Ruin(commands::RuinArgs),
    /// Run the invariant battery and exit nonzero on any failure.
    Verify(commands::VerifyArgs),
    /// Detector-scale estimate of the nonlinearity rate.
    EstimateZeta(commands::EstimateZetaArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::SimulateFull(args) => commands::simulate_full(args),
        Command::Ruin(args) => commands::ruin(args),
        Command::Verify(args) => commands::verify(args),
        Command::EstimateZeta(args) => commands::estimate_zeta(args),
    };
    std::process::exit(code);
}
