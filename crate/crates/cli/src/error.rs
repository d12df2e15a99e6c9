use std::fmt;
use std::path::Path;

/// A failed command: a machine-readable code, a message and the exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUN: u8 = 2;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: "E_USAGE".into(),
            message: message.into(),
            exit: EXIT_USAGE,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        bevdrive::Error::io(path, e).into()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one line, whatever the message contains
        let msg = self.message.replace('\n', " ");
        write!(f, "error[{}]: {}", self.code, msg)
    }
}

impl From<bevdrive::Error> for Failure {
    fn from(e: bevdrive::Error) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
            exit: EXIT_RUN,
        }
    }
}

impl From<bevdrive::policy::PolicyError> for Failure {
    fn from(e: bevdrive::policy::PolicyError) -> Self {
        bevdrive::Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        bevdrive::Error::from(e).into()
    }
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn with_scene(mut self, id: &str) -> Self {
        self.message = format!("scene `{id}`: {}", self.message);
        self
    }
}
