use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] klgrad_core::Error),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const UNSUPPORTED: i32 = 3;
    pub const COLLAPSE: i32 = 4;
    pub const IO: i32 = 5;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        use klgrad_core::Error as Core;
        match self {
            Error::Core(Core::UnsupportedExactSize { .. }) => exit::UNSUPPORTED,
            Error::Core(Core::NumericalCollapse(_) | Core::InfiniteDivergence) => exit::COLLAPSE,
            Error::Core(_) | Error::Validation(_) => exit::VALIDATION,
            // Malformed config files are a validation problem; failed reads are I/O.
            Error::Json(e) if e.is_io() => exit::IO,
            Error::Json(_) => exit::VALIDATION,
            Error::Io(_) | Error::Csv(_) => exit::IO,
        }
    }
}
