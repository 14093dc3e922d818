use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: header declares {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: usize, found: usize },

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("empty tensor")]
    EmptyTensor,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} exceeds declared object count {objects}")]
    LabelOutOfRange { label: u8, objects: u8 },

    #[error("window must be odd and positive, got {0}")]
    InvalidWindow(usize),

    #[error("reference position ({row}, {col}) outside {height}x{width} map")]
    ReferenceOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("query {0} has no valid candidates")]
    NoValidCandidates(usize),

    #[error("coarse patch {patch} larger than {height}x{width} map")]
    CoarsePatchTooLarge { patch: usize, height: usize, width: usize },

    #[error("frame {frame} inserted after frame {last}; frame indices must increase")]
    OutOfOrderInsert { frame: usize, last: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("object {object} leaves the frame at frame {frame}")]
    ObjectOutOfBounds { object: usize, frame: usize },

    #[error("{channels} channels cannot host {vectors} near-orthogonal feature vectors")]
    TooFewChannels { channels: usize, vectors: usize },

    #[error("cannot normalize a zero vector at position {0}")]
    ZeroVector(usize),

    #[error("no object has both anchor and positive features")]
    NoValidObjects,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("empty anchor set")]
    EmptyAnchorSet,

    #[error("video has no frames")]
    EmptyVideo,

    #[error("no annotated frames beyond the first")]
    NoAnnotatedFrames,

    #[error("{implementation} output differs from oracle at query {query}, direction {direction}, channel {channel}")]
    OracleMismatch {
        implementation: String,
        query: usize,
        direction: usize,
        channel: usize,
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
