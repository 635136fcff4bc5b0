use std::fmt;

/// Library-wide error type.  Variants are grouped by what the caller can do
/// about them; the CLI maps them onto distinct exit codes.
#[derive(Debug)]
pub enum Error {
    /// Tensor/layer shape disagreement; message names both shapes.
    ShapeMismatch(String),
    /// A depth value that cannot be lifted to a 3-D point (zero or negative).
    InvalidDepth(f32),
    /// Non-finite gradient or loss encountered during optimization.
    NonFinite(String),
    /// Bad configuration (resolution not divisible, channel list not
    /// increasing, resolution mismatch between weights and config, ...).
    Config(String),
    /// Weight file failed structural validation.
    WeightFormat(String),
    /// Malformed image file (PGM/PPM).
    ImageFormat(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Error::InvalidDepth(d) => write!(f, "invalid depth {d} (must be > 0)"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Config(m) => write!(f, "bad config: {m}"),
            Error::WeightFormat(m) => write!(f, "corrupt weight file: {m}"),
            Error::ImageFormat(m) => write!(f, "bad image file: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
