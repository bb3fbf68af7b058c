use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// A referenced file or directory is missing or unreadable.
    BadPath,
    /// Input was read but rejected.
    Validation,
    /// Newton did not converge.
    NoConvergence,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::BadPath => 2,
            Kind::Validation => 3,
            Kind::NoConvergence => 4,
            Kind::Internal => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Kind::BadPath => "bad_path",
            Kind::Validation => "validation",
            Kind::NoConvergence => "no_convergence",
            Kind::Internal => "internal",
        }
    }
}

/// Error carrying the exit status it should produce.
#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    /// Single line: `error kind=<label> code=<n> message=<json string>`.
    pub fn line(&self) -> String {
        format!(
            "error kind={} code={} message={}",
            self.kind.label(),
            self.kind.exit_code(),
            serde_json::to_string(&self.message).expect("string serializes")
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<CliError>() {
            Ok(c) => c,
            Err(e) => CliError::new(Kind::Internal, format!("{e:#}")),
        }
    }
}
