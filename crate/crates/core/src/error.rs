use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("unknown layer id {0}")]
    UnknownLayer(usize),

    #[error("invalid network graph: {0}")]
    Graph(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("truncated blob: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("inconsistent file: {0}")]
    Consistency(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("invalid covariance: {0}")]
    Covariance(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("unknown variable {0}")]
    UnknownVariable(usize),

    #[error("normal equations are singular even with damping {damping:e}")]
    Singular { damping: f64 },

    #[error("variable {0} is not identifiable: information matrix is singular")]
    NotIdentifiable(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid score table: {0}")]
    Table(String),

    #[error("no critical value tabulated for {groups} groups at alpha {alpha}")]
    TableLookup { groups: usize, alpha: f64 },

    #[error("unknown propagation method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
