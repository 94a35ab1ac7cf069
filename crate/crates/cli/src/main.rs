use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Semantic(String),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Semantic(_) => 1,
            CliError::Input(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "impulse-periodic", version, about = "Periodic solutions of impulsive neutral delay equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Problem configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid resolution; overrides `solver.N`
    #[arg(long)]
    grid: Option<usize>,
    /// Proceed when (H3)/(H4) fail; results are marked UNCERTIFIED
    #[arg(long)]
    force: bool,
    /// Suppress the summary on stdout
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the hypotheses and compute the a priori bounds
    Check(Common),
    /// Solve for a periodic solution
    Solve(Common),
    /// Verify a trajectory CSV against the problem
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Solve independently at every scheduled lambda
    Sweep(Common),
    /// Oracle utilities
    Testkit {
        #[command(subcommand)]
        action: TestkitCommand,
    },
}

#[derive(Debug, Subcommand)]
enum TestkitCommand {
    /// Regenerate the frozen fixtures
    Regen {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Check(c) => commands::check(&c),
        Command::Solve(c) => commands::solve(&c),
        Command::Verify { common, trajectory } => commands::verify(&common, &trajectory),
        Command::Sweep(c) => commands::sweep(&c),
        Command::Testkit {
            action: TestkitCommand::Regen { out },
        } => commands::regen(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
