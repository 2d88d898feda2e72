use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape codebook of 2^{lines_log2} lines exceeds the 2^20 line guard")]
    CodebookTooLarge { lines_log2: u32 },

    #[error("input vector is not unit norm (norm = {norm})")]
    NotUnitNorm { norm: f64 },

    #[error("gain must be non-negative, got {0}")]
    NegativeGain(f64),

    #[error("zero vector cannot be shape-gain encoded")]
    ZeroVector,

    #[error("sparsity {sparsity} exceeds block length {len}")]
    SparsityTooLarge { sparsity: usize, len: usize },

    #[error("projected dimension {rows} exceeds block length {cols}")]
    ProjectionTooTall { rows: usize, cols: usize },

    #[error("code value {value} does not fit in {bits} bits")]
    CodeOverflow { value: u32, bits: u8 },

    #[error("payload truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },

    #[error("bad header: {0}")]
    BadHeader(String),

    #[error("inconsistent group: {0}")]
    GroupMismatch(String),

    #[error("restricted projection is rank deficient (support size {support}, rows {rows})")]
    RankDeficient { support: usize, rows: usize },

    #[error("no sparsity level satisfies the recovery condition at R = {ratio}")]
    InfeasibleSparsity { ratio: f64 },

    #[error("no candidate ratio is feasible")]
    NoFeasibleRatio,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
