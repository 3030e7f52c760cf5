//! Library surface of the experiment runner, shared by the `agibbs` binary
//! and the acceptance suite.

pub mod config;
pub mod plot;
pub mod runner;

pub use config::ExperimentConfig;
pub use plot::emit_plot_data;
pub use runner::{run_experiment, run_experiment_config, BuiltModel, RunArtifacts, RunSummary};

/// Environment variable that overrides the root under which relative
/// `output.dir` paths are created.
pub const OUTPUT_ROOT_ENV: &str = "AGIBBS_OUT_ROOT";

/// Resolve the output root: explicit flag, then the environment override,
/// then the current directory.
pub fn output_root(flag: Option<std::path::PathBuf>) -> std::path::PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(std::path::PathBuf::from))
        .unwrap_or_else(|| std::path::PathBuf::from("."))
}
