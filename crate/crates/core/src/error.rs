//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("shape error in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A caller violated an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range: {detail}")]
    Range { index: usize, detail: String },

    /// A sensitive-attribute group, or a (label, group) cell, has no rows.
    #[error("empty group: {0}")]
    EmptyGroup(String),

    /// Split lacks a class (or a group lacks a class) so the metric is undefined.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    /// CSV / data parse failure. `row` is the 1-based data row (header excluded).
    #[error("parse error in {file} (row {row}, column `{column}`): {msg}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch} (lr = {lr}): objective = {objective}")]
    Divergence {
        epoch: usize,
        lr: f64,
        objective: f64,
    },

    /// A prerequisite artifact (data file or checkpoint) has not been produced yet.
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape {
            op,
            lhs: format!("{}x{}", lhs.0, lhs.1),
            rhs: format!("{}x{}", rhs.0, rhs.1),
        }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message of string-carrying variants with `ctx`.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::EmptyGroup(m) => Error::EmptyGroup(format!("{ctx}: {m}")),
            Error::DegenerateSplit(m) => Error::DegenerateSplit(format!("{ctx}: {m}")),
            Error::Checkpoint(m) => Error::Checkpoint(format!("{ctx}: {m}")),
            Error::Serde(m) => Error::Serde(format!("{ctx}: {m}")),
            Error::Range { index, detail } => Error::Range {
                index,
                detail: format!("{ctx}: {detail}"),
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Parse { .. }
            | Error::EmptyGroup(_)
            | Error::DegenerateSplit(_)
            | Error::Shape { .. }
            | Error::Range { .. }
            | Error::Contract(_)
            | Error::Checkpoint(_)
            | Error::Serde(_) => 3,
            Error::Divergence { .. } => 4,
            Error::Io { .. } | Error::MissingInput { .. } => 5,
        }
    }
}
