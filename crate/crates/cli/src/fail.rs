//! CLI failures: a short category plus a one-line message.

use std::fmt;
use std::path::Path;

pub type Result<T, E = Failure> = std::result::Result<T, E>;

#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new("schema", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" | "config" => 2,
            _ => 1,
        }
    }

    /// `error: <kind>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self
            .message
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        format!("error: {}: {msg}", self.kind)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for Failure {}

impl From<plasticity::Error> for Failure {
    fn from(e: plasticity::Error) -> Self {
        use plasticity::Error as E;
        let kind = match &e {
            E::Config(_) | E::UnknownUtility { .. } => "config",
            E::Io { .. } => "io",
            E::Corrupt { .. }
            | E::Version { .. }
            | E::BadMagic { .. }
            | E::Truncated { .. }
            | E::CountMismatch { .. } => "data",
            _ => "numeric",
        };
        Failure::new(kind, e.to_string())
    }
}
