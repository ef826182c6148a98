use std::process::ExitCode;

use nfmimo_core::Error;
use serde_json::{json, Value};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
    pub trace: Option<Vec<f64>>,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
            trace: None,
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
            trace: None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "error": self.kind,
            "message": self.message,
            "exit_code": self.code,
        });
        if let Some(trace) = &self.trace {
            v["trace"] = json!(trace);
        }
        v
    }

    pub fn report(&self) -> ExitCode {
        eprintln!("{}", self.to_json());
        ExitCode::from(self.code)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, kind) = match &e {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => {
                (EXIT_USAGE, "invalid_argument")
            }
            Error::Io { .. } => (EXIT_IO, "io"),
            Error::Format { .. } | Error::Json(_) => (EXIT_IO, "format"),
            Error::NumericalFailure { .. } => (EXIT_NUMERICAL, "numerical_failure"),
            Error::DegenerateGeometry(_) => (EXIT_NUMERICAL, "degenerate_geometry"),
            Error::Capacity { .. } => (EXIT_NUMERICAL, "capacity"),
            Error::UndefinedSnr => (EXIT_NUMERICAL, "undefined_snr"),
            Error::UndefinedNormalization => (EXIT_NUMERICAL, "undefined_normalization"),
        };
        let trace = match e {
            Error::NumericalFailure { trace, .. } => Some(trace),
            _ => None,
        };
        Self {
            code,
            kind,
            message,
            trace,
        }
    }
}
