//! Exit codes and the one-line error format.

use mpsams::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            kind: "data",
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }

    /// `error kind=<kind> code=<n> message=<json string>`
    pub fn line(&self) -> String {
        let msg = serde_json::to_string(&self.message).expect("string serializes");
        format!("error kind={} code={} message={msg}", self.kind, self.code)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidInput(_) => (EXIT_CONFIG, "config"),
            Error::Ingestion { .. } | Error::MissingFiles(_) | Error::Checkpoint(_) => (EXIT_DATA, "data"),
            Error::ClusteringDegenerate(_) | Error::TimedOut(_) | Error::Transfer(_) | Error::NonFiniteLoss { .. } => {
                (EXIT_TRAINING, "training")
            }
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => (EXIT_IO, "io"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}
