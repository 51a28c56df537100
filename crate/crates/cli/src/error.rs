use std::fmt;

/// A failed command: exit code plus a one-line reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            kind: "io",
            message: message.into(),
        }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            kind: "parse",
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn ground_truth(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            kind: "ground_truth",
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // newlines would break the one-line contract
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error code={} kind={} message={:?}", self.code, self.kind, msg)
    }
}

impl From<scanflow_core::ingest::FlowFileError> for CliError {
    fn from(e: scanflow_core::ingest::FlowFileError) -> Self {
        use scanflow_core::ingest::FlowFileError as E;
        match e {
            E::Open { .. } | E::Io(_) => CliError::io(e.to_string()),
            _ => CliError::parse(e.to_string()),
        }
    }
}

impl From<scanflow_core::ingest::GroundTruthError> for CliError {
    fn from(e: scanflow_core::ingest::GroundTruthError) -> Self {
        match e {
            scanflow_core::ingest::GroundTruthError::Io { .. } => CliError::io(e.to_string()),
            _ => CliError::ground_truth(e.to_string()),
        }
    }
}

impl From<scanflow_core::EngineError> for CliError {
    fn from(e: scanflow_core::EngineError) -> Self {
        CliError::parse(e.to_string())
    }
}

impl From<scanflow_core::synth::InvalidSpec> for CliError {
    fn from(e: scanflow_core::synth::InvalidSpec) -> Self {
        CliError::config(e.to_string())
    }
}
