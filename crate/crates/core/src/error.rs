use std::path::PathBuf;

/// Every failure the toolkit can report.
///
/// Variants are grouped by category so the CLI can map them onto exit codes
/// without string matching; see [`Error::category`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("corrupt trit code 0b11 at row {row}, byte {byte}")]
    Corruption { row: usize, byte: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error(
        "tensor {name} byte range {start}..{end} is out of bounds (data section is {len} bytes)"
    )]
    Bounds {
        name: String,
        start: u64,
        end: u64,
        len: u64,
    },

    #[error("tensors {first} and {second} have overlapping byte ranges")]
    Overlap { first: String, second: String },

    #[error("tensor {name} has unknown dtype {dtype:?}")]
    UnknownDtype { name: String, dtype: String },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor {name}: expected {expected} precision, found {found}")]
    Precision {
        name: String,
        expected: String,
        found: String,
    },

    #[error("precision map: {0}")]
    PrecisionMap(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("training error: {0}")]
    Phase(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, one per CLI exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Unreadable or invalid input (exit 2).
    Input,
    /// Precision-map parse failure (exit 3).
    PrecisionMap,
    /// Image decode failure (exit 4).
    Image,
    /// Context window overflow (exit 5).
    Capacity,
    /// Training phase / parameter group mismatch (exit 6).
    Phase,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::PrecisionMap(_) => Category::PrecisionMap,
            Error::Image(_) => Category::Image,
            Error::Capacity(_) => Category::Capacity,
            Error::Phase(_) => Category::Phase,
            _ => Category::Input,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
