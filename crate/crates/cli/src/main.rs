use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kscontrol_cli::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "kscontrol", version, about = "Chemotaxis-consumption control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Target {
    /// TOML run configuration.
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the state equations and write diagnostics.
    Forward(Target),
    /// Check the tangent, the adjoint and the reduced gradient.
    Gradcheck(Target),
    /// Minimize the tracking cost by projected gradient descent.
    Optimize(Target),
    /// Forward run with the full energy and regularity diagnostics.
    Diagnose(Target),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, target) = match cli.command {
        Cmd::Forward(t) => (Command::Forward, t),
        Cmd::Gradcheck(t) => (Command::Gradcheck, t),
        Cmd::Optimize(t) => (Command::Optimize, t),
        Cmd::Diagnose(t) => (Command::Diagnose, t),
    };
    let result = RunConfig::load(&target.config).and_then(|cfg| run(cmd, &cfg, &target.out));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.message);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.category.exit_code() as u8)
        }
    }
}
