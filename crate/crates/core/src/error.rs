//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input could not be parsed at all.
    #[error("parse error{}: {msg}", fmt_loc(.path, .offset))]
    Parse {
        path: Option<String>,
        offset: Option<usize>,
        msg: String,
    },

    /// Input parsed but violates a structural or ontology constraint.
    #[error("validation error: {0}")]
    Validation(String),

    /// The temporal edges of a graph contain a cycle.
    #[error("temporal cycle detected: [{}]", .0.join(", "))]
    TemporalCycle(Vec<String>),

    /// Tensor shapes do not line up; always a configuration or logic bug.
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A NaN or infinity appeared where a finite value was required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// Checkpoint does not match the ontology it is being loaded against.
    #[error("ontology fingerprint mismatch: checkpoint has {found}, ontology is {expected}")]
    FingerprintMismatch { expected: String, found: String },

    /// Checkpoint format version is not supported.
    #[error("unsupported checkpoint format version {0}")]
    FormatVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_loc(path: &Option<String>, offset: &Option<usize>) -> String {
    let mut s = String::new();
    if let Some(p) = path {
        s.push_str(&format!(" in {p}"));
    }
    if let Some(o) = offset {
        s.push_str(&format!(" at byte {o}"));
    }
    s
}

impl Error {
    /// Validation-class errors are caused by bad input rather than bugs;
    /// the CLI maps them to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::TemporalCycle(_)
                | Error::FingerprintMismatch { .. }
                | Error::FormatVersion(_)
                | Error::Io(_)
        )
    }

    pub(crate) fn parse(path: Option<&std::path::Path>, offset: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.map(|p| p.display().to_string()),
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
