use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Weights,
    Data,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Io => 3,
            ErrorClass::Weights => 4,
            ErrorClass::Data => 5,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Io => "io",
            ErrorClass::Weights => "weights",
            ErrorClass::Data => "data",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("variant mismatch: operation needs variant {expected}, model is {found}")]
    VariantMismatch { expected: char, found: char },

    #[error("invalid fusion: {0}")]
    InvalidFusion(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("FNMR undefined: no retained genuine comparisons")]
    UndefinedFnmr,

    #[error("bad magic in {path}: expected EXFQ")]
    BadMagic { path: PathBuf },

    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed container header: {0}")]
    BadHeader(String),

    #[error("missing tensor `{name}`")]
    MissingTensor { name: String },

    #[error("duplicate tensor `{name}`")]
    DuplicateTensor { name: String },

    #[error("unexpected tensor `{name}`")]
    UnexpectedTensor { name: String },

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{name}` lies outside the payload (offset {offset}, {len} bytes, payload {payload} bytes)")]
    OutOfBounds {
        name: String,
        offset: u64,
        len: u64,
        payload: u64,
    },

    #[error("tensor `{name}` overlaps a preceding tensor at offset {offset}")]
    Overlap { name: String, offset: u64 },

    #[error("tensor `{name}` contains non-finite values")]
    NonFinite { name: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}:{line}: unknown sample id `{id}`")]
    UnknownSample {
        path: PathBuf,
        line: u64,
        id: String,
    },

    #[error("{path}:{line}: duplicate sample id `{id}`")]
    DuplicateSample {
        path: PathBuf,
        line: u64,
        id: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Io { .. } => ErrorClass::Io,
            Config(_) | InvalidFusion(_) => ErrorClass::Usage,
            InvalidWeights(_)
            | BadMagic { .. }
            | VersionMismatch { .. }
            | BadHeader(_)
            | MissingTensor { .. }
            | DuplicateTensor { .. }
            | UnexpectedTensor { .. }
            | TensorShape { .. }
            | OutOfBounds { .. }
            | Overlap { .. }
            | NonFinite { .. }
            | VariantMismatch { .. } => ErrorClass::Weights,
            Dimension { .. }
            | Degenerate(_)
            | InsufficientData(_)
            | UndefinedFnmr
            | Parse { .. }
            | Format { .. }
            | UnknownSample { .. }
            | DuplicateSample { .. } => ErrorClass::Data,
        }
    }
}
