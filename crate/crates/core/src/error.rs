use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("validation: {0}")]
    Validation(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("state: {0}")]
    State(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("truncated file {path}")]
    Truncated { path: String },

    #[error("bad magic bytes in {path}: expected {expected:?}")]
    BadMagic { path: String, expected: String },

    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    Version {
        path: String,
        found: u32,
        supported: u32,
    },

    #[error("unknown tensor name {name:?} in {path}")]
    UnknownTensor { path: String, name: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
