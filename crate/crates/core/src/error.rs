// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

/// Errors raised by the analysis library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A binary dump or sidecar is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Filesystem failure, with the offending path.
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// An error raised while processing a specific layer.
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Self::Layer { layer, source: Box::new(self) }
    }

    /// True if the root cause is a filesystem failure.
    pub fn is_io(&self) -> bool {
        match self {
            Self::Io { .. } => true,
            Self::Layer { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
