//! Error type shared across the crate.

/// Crate-wide error enum. Numerical ops report the op name and the
/// offending shapes so failures in deep call stacks stay diagnosable.
#[derive(Debug, thiserror::Error)]
pub enum DmtError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {msg}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        msg: String,
    },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("world: {0}")]
    World(String),
    #[error("training diverged at epoch {epoch}, step {step}: {msg}")]
    Diverged {
        epoch: usize,
        step: usize,
        msg: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, DmtError>;

impl DmtError {
    pub fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        DmtError::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        DmtError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
