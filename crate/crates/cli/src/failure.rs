use std::path::Path;
use std::process::ExitCode;

use serde::Serialize;

/// A run failure, printed as one JSON object on one stderr line.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: String,
    pub message: String,
    #[serde(skip)]
    pub code: u8,
}

impl Failure {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Failure {
            error: kind.into(),
            message: message.into(),
            code: 1,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            ..Failure::new("usage", message)
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::new("io", format!("{}: {e}", path.display()))
    }

    pub fn report(&self) -> ExitCode {
        let line = serde_json::to_string(self).unwrap_or_else(|_| r#"{"error":"internal"}"#.into());
        eprintln!("{line}");
        ExitCode::from(self.code)
    }
}

impl From<floorloc::Error> for Failure {
    fn from(e: floorloc::Error) -> Self {
        let code = if matches!(e, floorloc::Error::InvalidParams(_)) { 2 } else { 1 };
        let message = e.to_string().replace('\n', " ");
        Failure {
            code,
            ..Failure::new(e.kind(), message)
        }
    }
}
