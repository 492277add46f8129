use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which lattice edge a leakage check tripped on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Lower,
    Upper,
}

impl std::fmt::Display for Edge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Edge::Lower => f.write_str("lower"),
            Edge::Upper => f.write_str("upper"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "kernel for K={kick_strength} needs half-width {required_half_width} \
         (limit {limit}) to reach tail tolerance {tail_tol:e}"
    )]
    Resource {
        kick_strength: f64,
        tail_tol: f64,
        required_half_width: usize,
        limit: usize,
    },

    #[error(
        "edge leakage before step {step}: mass {mass:e} within {band} sites of the {edge} edge \
         exceeds {threshold:e}; rerun on a larger lattice, e.g. [{suggested_min}, {suggested_max}]"
    )]
    EdgeLeakage {
        step: u64,
        edge: Edge,
        band: usize,
        mass: f64,
        threshold: f64,
        suggested_min: i64,
        suggested_max: i64,
    },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("unsupported schema version {found} (this build reads major version {supported})")]
    Schema { found: String, supported: u32 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Wraps `self` with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with any context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by a bad configuration rather than by a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Config { .. } | Error::Schema { .. } | Error::Json { .. }
        )
    }
}
