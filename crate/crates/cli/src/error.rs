use std::fmt;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad flags, config file or parameter combination. Exit 1.
    Config(String),
    /// Unreadable input, undecodable media, failed write. Exit 2.
    Io(String),
    /// An internal consistency check failed. Exit 3.
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "input/output error: {m}"),
            CliError::Invariant(m) => write!(f, "invariant violated: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sama_core::Error> for CliError {
    fn from(e: sama_core::Error) -> Self {
        use sama_core::Error as E;
        let msg = e.to_string();
        match e {
            E::UnsupportedFormat(_)
            | E::CorruptFile(_)
            | E::Io(_)
            | E::MixedDimensions { .. }
            | E::EmptyClip => CliError::Io(msg),
            E::InvalidConfig(_)
            | E::InputTooSmall { .. }
            | E::GridTooFine { .. }
            | E::CellSmallerThanFragment { .. }
            | E::IndivisibleDims { .. }
            | E::BadArity(_)
            | E::InsufficientFrames { .. } => CliError::Config(msg),
            E::InvalidFrame(_) | E::DimMismatch(_) | E::MissingProvenance => {
                CliError::Invariant(msg)
            }
        }
    }
}

impl From<sama_head::Error> for CliError {
    fn from(e: sama_head::Error) -> Self {
        CliError::Invariant(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
