//! Crate-wide error type and the process exit-code contract.

use std::fmt;
use std::io;
use std::path::PathBuf;

#[derive(Debug)]
pub enum NcbcError {
    /// Invalid parameter or configuration value (bad weights, rates, dims).
    Config(String),
    /// Field/graph dimensions disagree.
    Shape { expected: (usize, usize), got: (usize, usize), what: String },
    /// Node or pixel index out of range.
    Index(String),
    /// Input data violates a precondition (non-finite, negative, ...).
    Data(String),
    /// A quantity the math needs is degenerate (zero variance, zero mean, ...).
    Degeneracy(String),
    /// Optimization produced a non-finite value.
    Numerical(String),
    /// Malformed file content; `offset` is the byte position of the problem.
    Format { path: PathBuf, offset: u64, message: String },
    /// Structurally valid input that fails semantic validation (duplicate
    /// ROI names, out-of-bounds ROIs, schema violations).
    Validation(String),
    /// Underlying filesystem failure.
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T> = std::result::Result<T, NcbcError>;

impl NcbcError {
    /// Process exit code for the CLI: 2 for anything wrong with the inputs,
    /// 3 for numerical failures discovered while computing. (1 is reserved
    /// for usage errors and produced by the argument parser, not here.)
    pub fn exit_code(&self) -> i32 {
        match self {
            NcbcError::Config(_)
            | NcbcError::Shape { .. }
            | NcbcError::Index(_)
            | NcbcError::Data(_)
            | NcbcError::Format { .. }
            | NcbcError::Validation(_)
            | NcbcError::Io { .. } => 2,
            NcbcError::Degeneracy(_) | NcbcError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for NcbcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NcbcError::Config(msg) => write!(f, "configuration error: {msg}"),
            NcbcError::Shape { expected, got, what } => write!(
                f,
                "shape mismatch for {what}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            NcbcError::Index(msg) => write!(f, "index error: {msg}"),
            NcbcError::Data(msg) => write!(f, "data error: {msg}"),
            NcbcError::Degeneracy(msg) => write!(f, "degeneracy error: {msg}"),
            NcbcError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            NcbcError::Format { path, offset, message } => write!(
                f,
                "format error in {} at byte {offset}: {message}",
                path.display()
            ),
            NcbcError::Validation(msg) => write!(f, "validation error: {msg}"),
            NcbcError::Io { path, source } => {
                write!(f, "io error on {}: {source}", path.display())
            }
        }
    }
}

impl std::error::Error for NcbcError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            NcbcError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
