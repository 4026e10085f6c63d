use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: bad magic bytes at offset {offset} (expected \"GMX1\")", path.display())]
    BadMagic { path: PathBuf, offset: u64 },

    #[error("{}: malformed header at offset {offset}: {reason}", path.display())]
    BadHeader {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error(
        "{}: truncated payload at offset {offset}: expected {expected} bytes, found {found}",
        path.display()
    )]
    TruncatedPayload {
        path: PathBuf,
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("{}: non-finite value at offset {offset}", path.display())]
    NonFiniteValue { path: PathBuf, offset: u64 },

    #[error("{}: line {line}: {reason}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("{}: manifest parse error: {reason}", path.display())]
    ManifestParse { path: PathBuf, reason: String },

    #[error("missing artifact {}", path.display())]
    MissingArtifact { path: PathBuf },

    #[error("shape mismatch: {left} has shape {left_shape:?} but {right} has shape {right_shape:?}")]
    ShapeMismatch {
        left: String,
        left_shape: (usize, usize),
        right: String,
        right_shape: (usize, usize),
    },

    #[error("invalid workspace: {0}")]
    InvalidWorkspace(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },

    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("model {0} cannot be compared with itself")]
    SelfComparison(String),

    #[error("unknown model {0}")]
    UnknownModel(String),

    #[error("unknown test set {0}")]
    UnknownTestSet(String),

    #[error("test set {testset} has no evaluation on model {model}")]
    MissingEvaluation { model: String, testset: String },

    #[error("objective profile is empty: the objective test set exposes no faults")]
    EmptyObjective,

    #[error("no test set induces a fault on model {0}")]
    NoFaults(String),

    #[error("need more than {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },

    #[error("silhouette needs at least two non-noise clusters, got {0}")]
    TooFewClusters(usize),

    #[error("profiles come from different runs ({0} vs {1})")]
    MixedRuns(String, String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { got: usize, needed: usize },

    #[error("all values tied in at least one input: correlation undefined")]
    AllTied,

    #[error("objective {objective}: only {available} reference models available, need {needed}")]
    TooFewModels {
        objective: String,
        available: usize,
        needed: usize,
    },

    #[error("requested {requested} model types but only {available} are eligible")]
    NotEnoughTypes { requested: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for I/O and on-disk format
    /// failures, 1 for everything the user can fix in inputs or flags.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::BadHeader { .. }
            | Error::TruncatedPayload { .. }
            | Error::NonFiniteValue { .. }
            | Error::Csv { .. }
            | Error::ManifestParse { .. }
            | Error::Serialization(_) => 2,
            _ => 1,
        }
    }
}
