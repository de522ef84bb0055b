//! Errors with the process exit code they map to.

use std::fmt;

use pgmeta::Error;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid input. Exit 2.
    Input(String),
    /// The optimizer or a numerical step failed. Exit 3.
    Fit(String),
    /// An output could not be written. Exit 4.
    Write(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Write(_) => 4,
        }
    }

    pub fn write(what: impl fmt::Display, err: impl fmt::Display) -> Self {
        CliError::Write(format!("cannot write {what}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Fit(m) | CliError::Write(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Validation { .. }
            | Error::InvalidData(_)
            | Error::Dimension(_)
            | Error::Io(_)
            | Error::Csv(_) => CliError::Input(e.to_string()),
            Error::Singular(_) | Error::Support { .. } | Error::Numerical { .. } | Error::NoConvergence(_) => {
                CliError::Fit(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
