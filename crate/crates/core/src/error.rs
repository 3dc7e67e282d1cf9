use std::fmt;

/// What went wrong while decoding a feature container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadMagic([u8; 4]),
    UnsupportedVersion(u32),
    /// The payload ended before `needed` more bytes could be read.
    Truncated { needed: u64, available: u64 },
    /// `N·V·D` (or the byte size derived from it) does not fit in memory addressing.
    DimOverflow { n: u32, v: u32, d: u32 },
    InvalidName,
    TrailingBytes(u64),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic(m) => write!(f, "bad magic {:?}", String::from_utf8_lossy(m)),
            Self::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            Self::Truncated { needed, available } => {
                write!(f, "truncated: need {needed} bytes, {available} available")
            }
            Self::DimOverflow { n, v, d } => write!(f, "dimension overflow: {n}x{v}x{d}"),
            Self::InvalidName => write!(f, "tensor name is not valid UTF-8"),
            Self::TrailingBytes(n) => write!(f, "{n} trailing bytes after last tensor"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("malformed feature file at byte offset {offset}: {kind}")]
    Parse { offset: u64, kind: ParseErrorKind },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing features for classes: {}", .0.join(", "))]
    MissingClasses(Vec<String>),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
