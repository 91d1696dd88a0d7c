use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate lattice: basis matrix is singular (|det| = {0:e})")]
    DegenerateLattice(f64),

    #[error("unsupported dimension {0}; expected 1, 2 or 3")]
    UnsupportedDimension(usize),

    #[error("invalid lattice refinement n = {0}")]
    InvalidRefinement(usize),

    #[error("potential evaluated outside its smoothness region: {0}")]
    Domain(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid blend geometry: {0}")]
    InvalidGeometry(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
