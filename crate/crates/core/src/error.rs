use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::training::Checkpoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty line")]
    EmptyLine,
    #[error("malformed word {word:?}: empty word or unit")]
    MalformedWord { word: String },
    #[error("malformed morpheme annotation in {word:?}: empty morph")]
    MalformedMorpheme { word: String },
    #[error("tag scheme mismatch: {0}")]
    SchemeMismatch(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("position {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty score lattice")]
    EmptyLattice,
    #[error("non-finite loss encountered")]
    NonFiniteLoss {
        /// Parameters of the last fully completed epoch, when there is one.
        last_good: Option<Box<Checkpoint>>,
    },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid epoch index {0}, epochs are numbered from 1")]
    InvalidEpoch(usize),
    #[error("ensemble seeds must be pairwise distinct")]
    DuplicateSeeds,
    #[error("unsupported checkpoint version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("sentence {sentence}: gold and predicted unit streams differ")]
    AlignmentError { sentence: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}:{line}: {source}", path.display())]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
