use std::fmt;
use std::io;

/// Crate-wide error type. Variants are kept distinct so callers (and the CLI
/// exit-code mapping) can tell configuration problems, malformed files and
/// numeric failures apart.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not conform; names both shapes.
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },
    /// A tensor contains NaN or infinity where finite values are required.
    NonFinite { tensor: String },
    /// A sequence of length zero where at least one step is required.
    EmptySequence,
    /// Invalid configuration or inconsistent settings.
    Config(String),
    /// Class label outside `[0, classes)`.
    LabelOutOfRange { label: usize, classes: usize },
    /// Underlying I/O failure.
    Io(io::Error),
    /// File does not start with the expected magic bytes.
    BadMagic { expected: [u8; 4], got: [u8; 4] },
    /// File carries a format version this build does not understand.
    UnsupportedVersion { expected: u32, got: u32 },
    /// File ends before the header-declared payload does.
    Truncated { expected_bytes: u64, got_bytes: u64 },
    /// File length disagrees with what the header declares (surplus bytes).
    LengthMismatch { expected_bytes: u64, got_bytes: u64 },
    /// A header field holds a value that cannot describe a valid file.
    InvalidHeader { field: &'static str, value: u64 },
    /// Checkpoint/model configuration disagreement; names both values.
    ConfigMismatch {
        field: &'static str,
        expected: u64,
        got: u64,
    },
    /// Manifest or label-map file is malformed.
    Manifest(String),
    /// Non-finite loss or gradient during training; carries the diagnostic.
    NumericFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, expected, got } => {
                write!(f, "{op}: dimension mismatch, expected {expected}, got {got}")
            }
            Error::NonFinite { tensor } => write!(f, "non-finite value in {tensor}"),
            Error::EmptySequence => write!(f, "sequence is empty"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::BadMagic { expected, got } => write!(
                f,
                "bad magic: expected {:?}, got {:?}",
                String::from_utf8_lossy(expected),
                got
            ),
            Error::UnsupportedVersion { expected, got } => {
                write!(f, "unsupported format version {got} (expected {expected})")
            }
            Error::Truncated {
                expected_bytes,
                got_bytes,
            } => write!(
                f,
                "file truncated: expected {expected_bytes} bytes, got {got_bytes}"
            ),
            Error::LengthMismatch {
                expected_bytes,
                got_bytes,
            } => write!(
                f,
                "file length {got_bytes} disagrees with header-declared {expected_bytes}"
            ),
            Error::InvalidHeader { field, value } => {
                write!(f, "invalid header field {field} = {value}")
            }
            Error::ConfigMismatch {
                field,
                expected,
                got,
            } => write!(
                f,
                "configuration mismatch on {field}: expected {expected}, got {got}"
            ),
            Error::Manifest(msg) => write!(f, "manifest error: {msg}"),
            Error::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
