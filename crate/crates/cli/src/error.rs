use std::fmt;

use serde::Serialize;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Usage,
    Data,
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Usage => EXIT_USAGE,
            Kind::Data => EXIT_DATA,
            Kind::Runtime => EXIT_RUNTIME,
        }
    }

    /// One-line JSON document written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            code: i32,
            kind: Kind,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Doc {
            error: Body {
                code: self.exit_code(),
                kind: self.kind,
                message: &self.message,
            },
        })
        .unwrap_or_else(|_| format!("{{\"error\":{{\"code\":{}}}}}", self.exit_code()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<textpose::Error> for CliError {
    fn from(e: textpose::Error) -> Self {
        let message = e.to_string();
        if matches!(e, textpose::Error::Config(_)) {
            Self::usage(message)
        } else if e.is_data_error() {
            Self::data(message)
        } else {
            Self::runtime(message)
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
