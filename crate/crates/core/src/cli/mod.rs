//! The operational shell: run configuration, commands, checkpoints, and
//! report files.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ClientSnapshot};
pub use commands::{
    cmd_compare_aggregation, cmd_evaluate, cmd_generate_synthetic, cmd_simulate, run_simulation,
    ComparisonReport, SimulationArtifacts, SimulationRun,
};
pub use config::{config_hash, parse_config, IngestClientPaths, Mode, RunConfig};
