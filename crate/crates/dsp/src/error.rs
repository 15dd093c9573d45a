use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("unsupported wav: {property} is {found}, expected {expected}")]
    UnsupportedFormat {
        property: &'static str,
        found: String,
        expected: String,
    },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("input too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("invalid F0 statistics: {0}")]
    InvalidStats(String),
    #[error("no voiced frames")]
    NoVoicedFrames,
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("feature file: {0}")]
    Feature(String),
}
