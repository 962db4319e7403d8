use std::path::PathBuf;

/// Errors produced by the framework.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition or type invariant was violated.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("timestep exhausted: cannot step below k = 0")]
    TimestepExhausted,

    #[error("zero vector: {0}")]
    ZeroVector(&'static str),

    /// An embedding difference vanished, signalling a no-op edit.
    #[error("zero delta: {0}")]
    ZeroDelta(&'static str),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("classifier has no class set")]
    ClassSetUndefined,

    #[error("step count mismatch: schedule has {schedule} steps, trajectory has {trajectory}")]
    StepMismatch { schedule: usize, trajectory: usize },

    #[error("inversion failed after {completed} of {requested} steps: {source}")]
    PartialTrajectory {
        completed: usize,
        requested: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("every tau candidate failed: {0}")]
    AllCandidatesFailed(String),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("run `{0}` not found")]
    RunNotFound(String),

    #[error("run produced no counterfactuals")]
    NoCounterfactuals,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn backend(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with a short description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any number of [`Error::Context`] layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}

pub(crate) fn io_at<T>(path: impl Into<PathBuf>, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| Error::File {
        path: path.into(),
        source,
    })
}
