//! Batch front end: config loading, solve pipelines, the verification
//! battery and artifact output.

pub mod config;
pub mod csvio;
pub mod output;
pub mod pipeline;
pub mod verify;

pub use config::{Pipeline, RunConfig};
pub use output::Artifacts;
pub use pipeline::{export_kernels, solve, Outcome, RunOutput};
