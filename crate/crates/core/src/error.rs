use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("time levels must be strictly increasing with at least two entries: {0}")]
    TimeLevels(String),

    #[error("element {element} has non-positive measure {measure:e} after deformation")]
    InvertedElement { element: usize, measure: f64 },

    #[error("element {element} is degenerate")]
    DegenerateElement { element: usize },

    #[error("conflicting Dirichlet data at node {node}, component {component}: {first} vs {second}")]
    ConflictingDirichlet { node: usize, component: usize, first: f64, second: f64 },

    #[error("non-finite entry assembled on element {element}")]
    NonFinite { element: usize },

    #[error("Picard iteration did not converge in {iterations} iterations (last update {last_update:e})")]
    NotConverged { iterations: usize, last_update: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stale artifact: {0}")]
    StaleArtifact(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable code, used by the CLI and the service.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::TimeLevels(_) => "time_levels",
            Error::InvertedElement { .. } => "inverted_element",
            Error::DegenerateElement { .. } => "degenerate_element",
            Error::ConflictingDirichlet { .. } => "conflicting_dirichlet",
            Error::NonFinite { .. } => "non_finite",
            Error::NotConverged { .. } => "not_converged",
            Error::SingularSystem(_) => "singular_system",
            Error::Dimension(_) => "dimension",
            Error::Parameter(_) => "parameter",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::StaleArtifact(_) => "stale_artifact",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
