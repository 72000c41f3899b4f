use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed mesh file (line {line}): {msg}")]
    MeshFormat { line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("triangle {triangle} violates the triangle inequality: sides ({a}, {b}, {c})")]
    TriangleInequality {
        triangle: usize,
        a: f64,
        b: f64,
        c: f64,
    },

    #[error("vertex {index} out of range (mesh has {len} vertices)")]
    VertexOutOfRange { index: usize, len: usize },

    #[error("vertices {from} and {to} lie in different connected components")]
    Disconnected { from: usize, to: usize },

    #[error("{0} not computed yet")]
    NotComputed(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("adjustment family too large: {memberships} support memberships exceed the limit of {limit}; use smaller radius caps or a coarser grid")]
    FamilyTooLarge { memberships: usize, limit: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate statistic at column {column}: zero variance with a nonzero effect")]
    DegenerateStatistic { column: usize },

    #[error("no built-in statistic for this hypothesis: {0}")]
    UnsupportedHypothesis(String),

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("malformed data file {path}: {msg}")]
    DataFormat { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
