use thiserror::Error;

/// Every failure the library can report. Variants map one-to-one onto the
/// error classes callers are expected to branch on.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grammar error: {0}")]
    Grammar(String),
    #[error("token `{0}` is not in the catalog alphabet")]
    Alphabet(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("target ({x:.4}, {y:.4}) is unreachable")]
    Reachability { x: f64, y: f64 },
    #[error("point ({x:.4}, {y:.4}) lies outside the workspace")]
    OutOfWorkspace { x: f64, y: f64 },
    #[error("path spec error: {0}")]
    Spec(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("structural exhaustion: {0}")]
    StructuralExhaustion(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
