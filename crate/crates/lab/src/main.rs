use std::path::PathBuf;
use std::process::ExitCode;

use bdsde_lab::commands::{describe_error, exit_code, run_file, Command};
use clap::{Parser, Subcommand};

/// Experiments with the exact scenario-lattice solver.
#[derive(Parser)]
#[command(name = "bdsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides run.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Sample the structural assumptions.
    Check,
    /// Solve and dump u, v and diagnostics.
    Solve,
    /// Error table over lattice.N_list and fitted order.
    Converge,
    /// Energy balance residuals.
    Energy,
    /// Stability gap between two terminal values.
    Stability,
    /// Outer-iteration increments and contraction ratio.
    PicardDiag,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Check => Command::Check,
            Sub::Solve => Command::Solve,
            Sub::Converge => Command::Converge,
            Sub::Energy => Command::Energy,
            Sub::Stability => Command::Stability,
            Sub::PicardDiag => Command::PicardDiag,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    }
    let Some(config) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let result = run_file(cli.command.into(), &config, cli.out, cli.seed);
    if let Err(e) = &result {
        eprintln!("error: {}", describe_error(e));
    }
    ExitCode::from(exit_code(&result) as u8)
}
