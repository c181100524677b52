use std::fmt;
use std::path::Path;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Validation,
    Numerical,
    Io,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Validation => 1,
            Kind::Numerical => 2,
            Kind::Io => 3,
        }
    }
}

#[derive(Debug)]
pub struct AppError {
    pub kind: Kind,
    pub message: String,
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            kind: Kind::Io,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// Prefixes the message with where it happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<lierate::Error> for AppError {
    fn from(e: lierate::Error) -> Self {
        let kind = match e {
            lierate::Error::Numerical(_) => Kind::Numerical,
            _ => Kind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> AppResult<T>;
}

impl<T, E: Into<AppError>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> AppResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}
