use difno_core::Error;
use std::fmt;

/// Failure class; determines the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Config,
    Numeric,
    Io,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Numeric => 3,
            Kind::Io => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: m.into() }
    }

    pub fn numeric(m: impl Into<String>) -> Self {
        Self { kind: Kind::Numeric, message: m.into() }
    }

    pub fn io(m: impl Into<String>) -> Self {
        Self { kind: Kind::Io, message: m.into() }
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Numeric(_) | Error::NonFinite(_) | Error::RankDeficient { .. } => Kind::Numeric,
            Error::Io(_) | Error::Format { .. } => Kind::Io,
            _ => Kind::Config,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

pub trait Context<T> {
    fn at(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn at(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}
