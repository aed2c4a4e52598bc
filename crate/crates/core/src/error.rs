use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {col} out of range (crossbar has {cols} columns)")]
    ColumnOutOfRange { col: usize, cols: usize },
    #[error("row {row} out of range (crossbar has {rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("output column {0} aliases an input of a native operation")]
    OutputAliasesInput(usize),
    #[error("{op} expects {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: &'static str, got: usize },
    #[error("malformed aggregation spec: {0}")]
    MalformedAggSpec(String),
    #[error("unknown page {0}")]
    UnknownPage(usize),
    #[error("page {0} is busy")]
    PageBusy(usize),
    #[error("malformed request payload: {0}")]
    MalformedPayload(String),
    #[error("bit-vector transfer is misaligned: {0}")]
    MisalignedTransfer(String),
    #[error("negative event scope: {0}")]
    NegativeScope(f64),
    #[error("query latency must be positive")]
    ZeroLatency,
    #[error("schema does not fit: {0}")]
    Overflow(String),
    #[error("module capacity exceeded: need {needed} pages, have {available}")]
    CapacityExceeded { needed: usize, available: usize },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("immediate {value} does not fit attribute `{attr}` of {width} bits")]
    ImmediateWidth { attr: String, value: u64, width: u32 },
    #[error("width mismatch: {0}")]
    WidthMismatch(String),
    #[error("microcode scratch columns exhausted")]
    ScratchExhausted,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("subgroup value {value} outside the domain of `{attr}`")]
    SubgroupDomain { attr: String, value: u32 },
    #[error("missing model table entry for {0}")]
    MissingModelEntry(String),
    #[error("rank-deficient calibration grid: {0}")]
    RankDeficient(String),
    #[error("hybrid execution requires fitted model tables")]
    UnfittedModels,
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("invalid literal for `{attr}`: {msg}")]
    Literal { attr: String, msg: String },
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("unknown query template `{0}`")]
    UnknownTemplate(String),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("relation file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
