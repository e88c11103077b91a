//! Command-line plumbing around the `enasep` library: run configuration,
//! subcommand bodies, and map rendering.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod render;

pub use commands::{run_pipeline, PipelineReport};
pub use config::RunConfig;
pub use error::{CliError, Result};
pub use render::render_heatmap;
