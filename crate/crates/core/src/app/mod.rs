//! The command-line front end as a library: stage functions, the pipeline
//! config, run manifests and the argument parser.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod run;
pub mod stages;

pub use cli::{run_cli, Cli};
pub use config::PipelineConfig;
pub use pipeline::run_pipeline;
pub use run::RunManifest;
