use std::fmt;
use std::process::ExitCode;

use aflow_core::classifier::{ClassifierError, EngineError};
use aflow_core::locality::LocalityError;
use aflow_core::msfilter::FilterError;
use aflow_core::trace::TraceError;

/// Error class, printed as `error[<class>]: <message>` on a single line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Config,
    Input,
    Invariant,
}

impl Class {
    fn as_str(self) -> &'static str {
        match self {
            Class::Config => "config",
            Class::Input => "input",
            Class::Invariant => "invariant",
        }
    }

    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Class::Config => 2,
            Class::Input => 3,
            Class::Invariant => 4,
        })
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: Class,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(class: Class, kind: &'static str, message: impl fmt::Display) -> Self {
        Self {
            class,
            kind,
            message: message.to_string(),
        }
    }

    pub fn config(kind: &'static str, message: impl fmt::Display) -> Self {
        Self::new(Class::Config, kind, message)
    }

    pub fn input(kind: &'static str, message: impl fmt::Display) -> Self {
        Self::new(Class::Input, kind, message)
    }

    pub fn invariant(message: impl fmt::Display) -> Self {
        Self::new(Class::Invariant, "Invariant", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep it on one line whatever the source said.
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {}: {}", self.class.as_str(), self.kind, msg)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::InvalidConfig(_) => CliError::config("InvalidConfig", e),
            TraceError::BadMagic(_) | TraceError::TruncatedHeader => CliError::input("BadPcap", e),
            TraceError::UnsupportedLinkType(_) => CliError::input("UnsupportedLinkType", e),
            TraceError::SchemaMismatch { .. } => CliError::input("SchemaMismatch", e),
            TraceError::OutOfOrder { .. } => CliError::input("OutOfOrder", e),
            TraceError::Csv(_) => CliError::input("Csv", e),
            TraceError::Io(_) => CliError::input("Io", e),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::MissingPayload { .. } => CliError::input("MissingPayload", e),
            EngineError::MissingTruthLabel(_) => CliError::input("MissingTruthLabel", e),
            EngineError::Config { .. } => CliError::config("InvalidRules", e),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        CliError::config("InvalidConfig", e)
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Engine(e) => e.into(),
            ClassifierError::Filter(e) => e.into(),
            ClassifierError::InvalidConfig(_) => CliError::config("InvalidConfig", e),
        }
    }
}

impl From<LocalityError> for CliError {
    fn from(e: LocalityError) -> Self {
        match e {
            LocalityError::EmptyInput => CliError::input("EmptyInput", e),
            _ => CliError::input("InsufficientData", e),
        }
    }
}
