use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("record {record}: attribute vector has length {found}, schema expects {expected}")]
    SchemaMismatch {
        record: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        term: &'static str,
    },

    #[error("config error: {0}")]
    Config(String),

    /// The underlying I/O error is the source.
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures when decoding one of the binary file formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("shape mismatch: header declares {declared}, payload holds {actual}")]
    ShapeMismatch { declared: String, actual: String },

    #[error("invalid field: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: missing column {column:?}")]
    MissingColumn { line: usize, column: String },

    #[error("line {line}: unknown column {column:?}")]
    UnknownColumn { line: usize, column: String },

    #[error("line {line}: column {column:?} expected {expected:?}, found {found:?}")]
    ColumnOrder {
        line: usize,
        column: usize,
        expected: String,
        found: String,
    },

    #[error("line {line}: non-binary attribute value {value:?} in column {column:?}")]
    NonBinary {
        line: usize,
        column: String,
        value: String,
    },

    #[error("line {line}: duplicate image_id {image_id}")]
    DuplicateImage { line: usize, image_id: u32 },

    #[error("line {line}: invalid value {value:?} for {column:?}")]
    InvalidValue {
        line: usize,
        column: String,
        value: String,
    },

    #[error("line {line}: wrong field count, expected {expected}, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}
