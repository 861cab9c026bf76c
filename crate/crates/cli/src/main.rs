//! Config-driven front end for the Bellman-form Monge-Ampere solver and the
//! viscosity-property verifier.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "mahjb",
    version,
    about = "Monotone wide-stencil solver and viscosity-property verifier \
             for the HJB form of the simple Monge-Ampere equation"
)]
struct Cli {
    /// TOML run configuration (defaults listed below).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized sweeps (overrides seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Dirichlet problem and write the solution CSV.
    Solve,
    /// Solve per refinement level and write diagonal cross sections.
    CrossSection,
    /// Check viscosity sub/supersolution certificates for a candidate.
    Verify,
    /// Refinement study against a supplied exact solution.
    Convergence,
    /// Randomized self-checks of the Hamiltonian closed forms.
    HamiltonianCheck,
}

fn main() -> ExitCode {
    let footer = format!("Config defaults (TOML):\n{}", RunConfig::default().to_toml());
    let matches = Cli::command().after_help(footer).try_get_matches();
    let cli = match matches {
        Ok(m) => Cli::from_arg_matches(&m).expect("matches parse"),
        Err(e) => {
            let ok = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(commands::EXIT_CONFIG as u8) };
        }
    };

    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_CONFIG as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(commands::EXIT_OK);
    }
    let out_dir = PathBuf::from(&cfg.output.dir);
    match cli.command {
        Command::Solve => commands::run_solve(&cfg, &out_dir),
        Command::CrossSection => commands::run_cross_section(&cfg, &out_dir),
        Command::Verify => commands::run_verify(&cfg, &out_dir),
        Command::Convergence => commands::run_convergence(&cfg, &out_dir),
        Command::HamiltonianCheck => commands::run_hamiltonian_check(&cfg),
    }
}
