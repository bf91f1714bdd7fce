use std::fmt;
use std::path::Path;

use stlth_core::Error as CoreError;

/// Process exit statuses.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError { code: EXIT_IO, message: format!("{}: {err}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::NonFinite(_) => EXIT_NUMERIC,
            CoreError::Io { .. } | CoreError::Image { .. } | CoreError::EmptyFolder(_) | CoreError::Format { .. } => {
                EXIT_IO
            }
            _ => EXIT_CONFIG,
        };
        CliError { code, message: e.to_string() }
    }
}
