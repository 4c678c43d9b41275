use cbsprob_cli::{load_config, run, Mode, Overrides, RunError};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const THREADS_VAR: &str = "CBSPROB_THREADS";

/// Probabilistic deadline analysis and budget allocation for tasks served by
/// CPU reservations.
///
/// Exit codes: 0 success, 2 infeasible optimization, 3 configuration or
/// usage error, 4 numerical or output failure. The worker thread count
/// comes from CBSPROB_THREADS (default: all cores).
#[derive(Parser)]
#[command(name = "cbsprob", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state deadline probabilities for every task, budget and Δ.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Write the backlog chain of every analysis point as JSON.
        #[arg(long, value_name = "PATH")]
        dump_chain: Option<PathBuf>,
    },
    /// Monte Carlo replay of the backlog on raw execution times.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Budgets maximizing the smallest task quality.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// analytic | companion | cyclic-reduction | fixed-point
    #[arg(long)]
    solver: Option<String>,
    /// Write the JSON report here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write sweep rows, the delay histogram or the allocation table as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// Print the JSON report instead of the text table.
    #[arg(long)]
    json: bool,
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|e| RunError::Output(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<bool, RunError> {
    let (mode, common, dump_chain) = match cli.command {
        Command::Analyze { common, dump_chain } => (Mode::Analyze, common, dump_chain),
        Command::Simulate { common } => (Mode::Simulate, common, None),
        Command::Optimize { common } => (Mode::Optimize, common, None),
    };
    let overrides = Overrides {
        solver: common.solver,
        seed: common.seed,
    };
    let config = load_config(&common.config, mode, &overrides)?;
    let outcome = run(&config, dump_chain.is_some())?;
    if let Some(path) = &common.out {
        write(path, &outcome.json)?;
    }
    if let Some(path) = &common.csv {
        write(path, &outcome.csv)?;
    }
    if let (Some(path), Some(dumps)) = (&dump_chain, &outcome.chain_dumps) {
        write(path, dumps)?;
    }
    if common.json {
        print!("{}", outcome.json);
    } else {
        print!("{}", outcome.text);
    }
    Ok(!outcome.infeasible)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(3),
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(3);
    }
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
