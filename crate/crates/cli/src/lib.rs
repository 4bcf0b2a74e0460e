//! The `bugforge` pipeline: configuration, stage manifests and the stages
//! themselves.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{exit_code, CliError};
