use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use async_gibbs_cli::{emit_plot_data, output_root, run_experiment, ExperimentConfig};

/// Asynchronous Gibbs sampling experiment runner.
#[derive(Parser)]
#[command(name = "agibbs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        /// Path to a TOML experiment configuration.
        config: PathBuf,
        /// Root for relative output directories (overrides AGIBBS_OUT_ROOT).
        #[arg(long)]
        out_root: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Emit tidy plot CSVs for one run directory or a directory of runs.
    PlotData { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out_root } => {
            let root = output_root(out_root);
            run_experiment(&config, &root).map(|artifacts| {
                println!("{}", artifacts.dir.display());
            })
        }
        Command::Validate { config } => ExperimentConfig::from_path(&config).map(|_| {
            println!("ok");
        }),
        Command::PlotData { dir } => emit_plot_data(&dir).map(|written| {
            for path in written {
                println!("{}", path.display());
            }
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Machine-readable single-line error on stderr.
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
