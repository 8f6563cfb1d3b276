use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path} at line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dialogue {dialogue}, turn {turn}: {message}")]
    InvalidTurn {
        dialogue: String,
        turn: usize,
        message: String,
    },

    #[error("dialogue {dialogue}, turn {turn}: slot {slot:?} has value {value:?} outside the ontology")]
    UnknownValue {
        dialogue: String,
        turn: usize,
        slot: String,
        value: String,
    },

    #[error("dialogue {dialogue}, turn {turn}: unknown slot {slot:?}")]
    UnknownSlot {
        dialogue: String,
        turn: usize,
        slot: String,
    },

    #[error("ontology: {0}")]
    Ontology(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("context does not fit: {required} tokens needed without history, max_len is {max_len}")]
    Capacity { required: usize, max_len: usize },

    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("empty labeled pool")]
    EmptyLabeledPool,

    #[error("invalid split: {0}")]
    Split(String),

    #[error("no turns")]
    NoTurns,

    #[error("no active turns for domain {0:?}")]
    NoActiveTurns(String),

    #[error("unknown domain {0:?}")]
    UnknownDomain(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("gold value {value:?} is not a candidate of slot {slot:?}")]
    GoldNotInOntology { slot: String, value: String },

    #[error("similarity of a zero vector is undefined")]
    ZeroVector,

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dialogue {dialogue}, turn {turn} has no pseudo label")]
    MissingPseudoLabel { dialogue: String, turn: usize },

    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file_bytes(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, &e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_file(path, text)
}
