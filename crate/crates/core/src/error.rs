use std::path::PathBuf;

use cafu_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{junction}: {source}")]
    Shape {
        junction: String,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sample {id}: {reason}")]
    Data { id: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown ablation variant or plan `{0}`")]
    UnknownVariant(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(vec![msg.into()])
    }

    pub fn data(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Data {
            id: id.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::UnknownVariant(_) | Self::Checkpoint(_) => 2,
            Self::Data { .. } | Self::Io { .. } => 3,
            Self::Numeric(_) | Self::Shape { .. } | Self::Tensor(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attaches a junction name to tensor-level failures.
pub(crate) trait At<T> {
    fn at(self, junction: impl FnOnce() -> String) -> Result<T>;
}

impl<T> At<T> for std::result::Result<T, TensorError> {
    fn at(self, junction: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Shape {
            junction: junction(),
            source,
        })
    }
}
