use std::path::PathBuf;

/// Errors produced by the library.
///
/// `Config` covers everything a caller got wrong before a run starts
/// (invalid parameters, malformed files, missing inputs); the remaining
/// variants are runtime failures. The CLI maps the two groups onto
/// distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),

    #[error("raw reward {raw} outside scale bounds [{min}, {max}]")]
    RawRewardOutOfBounds { raw: f64, min: f64, max: f64 },

    #[error("observe does not match the pending decision: {0}")]
    DecisionMismatch(String),

    #[error("no pending decision; call select before observe")]
    NoPendingDecision,

    #[error("unknown action index {action} for {k} actions")]
    UnknownAction { action: usize, k: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("snapshot format version {found} not supported (expected {expected})")]
    SnapshotVersion { found: u16, expected: u16 },

    #[error("snapshot record corrupted: {0}")]
    SnapshotCorrupted(String),

    #[error("scenario generation failed after {0} attempts (no unique optimum)")]
    ScenarioGeneration(usize),

    #[error("checkpoint grids differ between replicates")]
    MismatchedCheckpoints,
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors a user can fix by editing configuration or inputs
    /// (including pointing at a file that does not exist).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::ScenarioGeneration(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
