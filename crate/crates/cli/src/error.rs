use std::path::Path;

use distill_cl_core::Error;
use serde::Serialize;

use crate::config::FieldError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    Config,
    Data,
    Numeric,
    Io,
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config => 2,
            Failure::Data => 3,
            Failure::Numeric => 4,
            Failure::Io => 5,
        }
    }
}

/// Machine-readable error record, printed as JSON on failure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub error: Failure,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

impl CliError {
    pub fn new(kind: Failure, message: impl Into<String>) -> Self {
        CliError {
            error: kind,
            exit_code: kind.exit_code(),
            message: message.into(),
            fields: Vec::new(),
        }
    }

    pub fn config(fields: Vec<FieldError>) -> Self {
        let message = format!("{} invalid configuration field(s)", fields.len());
        CliError {
            fields,
            ..CliError::new(Failure::Config, message)
        }
    }

    pub fn io(context: &str, path: &Path, e: std::io::Error) -> Self {
        CliError::new(Failure::Io, format!("{context} {}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error record serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)?;
        for e in &self.fields {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for CliError {}

pub fn classify(e: &Error) -> Failure {
    match e.root() {
        Error::Io { .. } => Failure::Io,
        Error::Data { .. } | Error::Checksum { .. } | Error::Format(_) => Failure::Data,
        Error::NonFinite(_) => Failure::Numeric,
        Error::InvalidSpec(_) | Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => {
            Failure::Config
        }
        Error::Stage { .. } => unreachable!("root looks through stages"),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(classify(&e), e.to_string())
    }
}
