use std::fmt;

/// Error type shared across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("window must be >= 1, got {0}")]
    BadWindow(usize),
    #[error("frequency ratio must be positive, got {0}")]
    BadFrequency(f64),
    #[error("missing glyph for {0:?}")]
    MissingGlyph(char),
    #[error("missing glyph feature for {0:?}")]
    MissingGlyphFeature(char),
    #[error("duplicate codepoint {codepoint:?} at entry {index}")]
    DuplicateCodepoint { codepoint: char, index: usize },
    #[error("malformed archive at entry {index}: {msg}")]
    MalformedArchive { index: usize, msg: String },
    #[error("shape mismatch at level {level}: {msg}")]
    ShapeMismatch { level: usize, msg: String },
    #[error("numeric overflow: {0}")]
    NumericOverflow(String),
    #[error("training diverged at level {level}, step {step}")]
    Divergence { level: usize, step: usize },
    #[error("character index {index} out of range for word length {len}")]
    PositionOutOfRange { index: usize, len: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("undefined correlation: constant input")]
    UndefinedCorrelation,
    #[error("degenerate correlation |rho| = 1")]
    DegenerateCorrelation,
    #[error("no pairs left after OOV removal")]
    NoPairs,
    #[error("duplicate word {0:?}")]
    DuplicateWord(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code class: 1 for usage/config mistakes, 2 for data
    /// problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericOverflow(_) | Error::Divergence { .. } => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Tags an error with positional context for messages.
pub(crate) fn parse_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}
