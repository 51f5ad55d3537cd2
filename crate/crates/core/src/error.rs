use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChonkError {
    #[error("value {value} does not fit in {width} bits")]
    Range { value: u128, width: u32 },
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("empty input")]
    EmptyInput,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("diffbit undefined for equal sequences")]
    UndefinedDiffbit,
    #[error("equal neighbouring contents reached the diffbit phase")]
    CaterpillarViolation,
    #[error("content too large: {0} bits")]
    UnsupportedSize(u128),
    #[error("invalid input encoding at byte {0}")]
    InvalidEncoding(usize),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, ChonkError>;
