use thiserror::Error;

/// Errors produced anywhere in the descriptor pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    TruncatedPixels { expected: usize, found: usize },
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("box centered at ({row}, {col}) with size {size} is out of bounds")]
    BoxOutOfBounds { row: i64, col: i64, size: u32 },
    #[error("box size {0} must be odd and positive")]
    InvalidBoxSize(u32),

    #[error("empty pair list")]
    EmptyPairs,
    #[error("negative or non-finite sample weight {weight} at index {index}")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("patch index {index} out of range for {count} patches")]
    PatchIndexOutOfRange { index: usize, count: usize },
    #[error("patch of side {side} is too small for box size {size}")]
    PatchTooSmall { side: usize, size: u32 },
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class with zero total weight: {0}")]
    EmptyClass(&'static str),
    #[error("no usable weak learner")]
    NoUsableWeakLearner,
    #[error("insufficient positives: requested {requested}, available {available}")]
    InsufficientPositives { requested: usize, available: usize },

    #[error("bad magic")]
    BadMagic,
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated model stream")]
    TruncatedModel,
    #[error("record count mismatch: header declares {declared}, stream holds {actual}")]
    RecordCountMismatch { declared: usize, actual: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model has mode {actual}, expected {expected}")]
    WrongMode { expected: &'static str, actual: &'static str },
    #[error("empty model")]
    EmptyModel,
    #[error("cannot truncate a {have}-learner model to {requested}")]
    TruncateTooLong { have: usize, requested: usize },

    #[error("metric does not match descriptor type")]
    MetricMismatch,
    #[error("empty train set")]
    EmptyTrainSet,

    #[error("both classes must be present")]
    SingleClass,
    #[error("no relevant items")]
    NoRelevant,
    #[error("missing descriptor {0}")]
    MissingDescriptor(usize),
    #[error("empty correspondence set")]
    EmptyCorrespondences,
    #[error("correspondences are not a partial bijection")]
    NotBijective,
    #[error("query {0} has no relevant item in the pool")]
    QueryStructureAbsent(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
