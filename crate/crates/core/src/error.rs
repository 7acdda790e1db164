use crate::graph::GraphError;
use crate::repository::StoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("provenance {graph_id}@{version} (node {node_id}) does not resolve in the repository")]
    DanglingProvenance {
        graph_id: String,
        version: u32,
        node_id: String,
    },

    #[error("no executor registered for node kind {0}")]
    MissingExecutor(String),

    #[error("executor failed on node {node}: {message}")]
    ExecutorFailure { node: String, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
