use std::path::PathBuf;

use thiserror::Error;

use bugforge_model::ModelError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },
    #[error("{stage}: missing input {path} (run `{needs}` first)")]
    StageInputMissing {
        stage: &'static str,
        path: PathBuf,
        needs: &'static str,
    },
    #[error("{0}")]
    Data(String),
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(CliError::Config { .. }) = cause.downcast_ref::<CliError>() {
            return EXIT_CONFIG;
        }
        match cause.downcast_ref::<ModelError>() {
            Some(ModelError::Diverged { .. }) => return EXIT_DIVERGED,
            Some(ModelError::Config(_)) => return EXIT_CONFIG,
            _ => {}
        }
    }
    EXIT_DATA
}
