use std::path::PathBuf;

use thiserror::Error;

use crate::domain::SampleId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid probability map: {0}")]
    InvalidProbMap(String),
    #[error("invalid MC stack: {0}")]
    InvalidMcStack(String),
    #[error("invalid pixel set: {0}")]
    InvalidPixelSet(String),
    #[error("invalid uncertainty map: {0}")]
    InvalidUncMap(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("pixel index {index} out of range for a {len}-pixel map")]
    PixelIndexOutOfRange { index: usize, len: usize },
    #[error("cannot query an empty pool")]
    EmptyPool,
    #[error("sample {id} has no prediction of the kind required by scorer {scorer}")]
    PredictionMismatch { id: SampleId, scorer: String },
    #[error("unknown strategy {name:?}; valid names are: {valid}")]
    UnknownStrategy { name: String, valid: String },

    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("MC prediction needs at least 2 passes, got {0}")]
    TooFewPasses(usize),

    #[error("dataset split oversubscribed: initial {initial} + validation {validation} + test {test} > {total} samples")]
    SplitOversubscribed {
        initial: usize,
        validation: usize,
        test: usize,
        total: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad container header in {path}: {reason}")]
    HeaderParse { path: PathBuf, reason: String },
    #[error("truncated payload in {path}: {got} bytes do not form whole 32-bit values")]
    TruncatedPayload { path: PathBuf, got: usize },
    #[error("payload size mismatch in {path}: header implies {expected} values, payload holds {actual}")]
    PayloadSizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("probability out of range in {path}: sample {id}, pixel {pixel}, value {value}")]
    ProbabilityOutOfRange {
        path: PathBuf,
        id: SampleId,
        pixel: usize,
        value: f64,
    },
    #[error("bad mask byte in {path}: sample {id}, pixel {pixel}, value {value} (expected 0 or 1)")]
    BadMaskByte {
        path: PathBuf,
        id: SampleId,
        pixel: usize,
        value: u8,
    },
    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),
    #[error("manifest mismatch in {path}: {reason}")]
    ManifestMismatch { path: PathBuf, reason: String },
    #[error("failed to parse {path}: {reason}")]
    ConfigParse { path: PathBuf, reason: String },

    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("malformed CSV row in {file}, line {line}: {reason}")]
    CsvParse {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("no round-log CSV files found in {0}")]
    EmptyReportInput(PathBuf),
    #[error("dataset failed validation: {0}")]
    DatasetInvalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
