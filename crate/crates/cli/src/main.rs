use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use driftlab::experiment::{emit_plot_data, run_experiment, Mode, EXIT_CONFIG};
use driftlab::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "driftlab", version, about = "Adaptive MCMC simulations and drift certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (run, verify) or CSV file (plot; stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides run.replicas.
    #[arg(long, global = true)]
    replicas: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the simulations, then the verifications of a config.
    Run { config: PathBuf },
    /// Run only the verifications of a config.
    Verify { config: PathBuf },
    /// Turn a trajectory CSV or report JSON into plot-ready CSV.
    Plot {
        input: PathBuf,
        #[arg(long)]
        kind: String,
        /// Window of the rolling acceptance rate.
        #[arg(long, default_value_t = 1000)]
        window: usize,
    },
}

fn experiment(cli: &Cli, path: &Path, mode: Mode) -> i32 {
    let cfg = match ExperimentConfig::load(path)
        .and_then(|c| c.with_overrides(cli.seed, cli.replicas, cli.out.clone()))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_experiment(&cfg, mode) {
        Ok(out) => {
            print!("{}", out.table);
            out.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { config } => experiment(&cli, config, Mode::Run),
        Command::Verify { config } => experiment(&cli, config, Mode::Verify),
        Command::Plot { input, kind, window } => {
            let res = match &cli.out {
                Some(path) => std::fs::File::create(path)
                    .map_err(driftlab::Error::from)
                    .and_then(|f| emit_plot_data(input, kind, *window, f)),
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    emit_plot_data(input, kind, *window, &mut lock).and_then(|()| Ok(lock.flush()?))
                }
            };
            match res {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CONFIG
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
