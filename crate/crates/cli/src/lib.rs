//! Command-line front end for `esfma`: CSV ingestion, fitting, simulation,
//! benchmarks and model archives.

pub mod archive;
pub mod commands;
pub mod data;
pub mod error;
pub mod report;

pub use archive::{load_model, save_model, ArchiveError, ModelArchive};
pub use commands::{cmd_bench, cmd_fit, cmd_simulate, run_from_args, BenchArgs, Cli, FitArgs, SimulateArgs};
pub use data::{load_dataset, ColumnSpec, LoadedData};
pub use error::{CliError, CliResult};
