use std::fmt;

use serde_json::json;

/// Exit codes. Clap's own usage errors also exit with 2.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_UNKNOWN_MODEL: u8 = 3;
pub const EXIT_OUTPUT: u8 = 4;
pub const EXIT_RUN: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn output(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_OUTPUT,
            kind: "output",
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<tapsim::Error> for CliError {
    fn from(e: tapsim::Error) -> Self {
        use tapsim::Error as E;
        let (code, kind) = match &e {
            E::UnknownModel(_) => (EXIT_UNKNOWN_MODEL, "unknown_model"),
            E::Config(_) | E::Expr(_) | E::InvalidModel(_) | E::Json(_) => (EXIT_USAGE, "config"),
            E::Io(_) => (EXIT_RUN, "io"),
            E::StepSize(_) => (EXIT_RUN, "step_size"),
            E::BoundViolation(_) => (EXIT_RUN, "bound_violation"),
            E::Precondition(_) => (EXIT_RUN, "precondition"),
            _ => (EXIT_RUN, "simulation"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

/// Any failure while writing results is an output error.
pub fn out_err(e: impl fmt::Display) -> CliError {
    CliError::output(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;
