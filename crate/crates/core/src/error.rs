use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{primitive}: shape mismatch ({detail})")]
    Shape {
        primitive: &'static str,
        detail: String,
    },

    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("ROI {roi} has zero variance")]
    ZeroVariance { roi: usize },

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subject {subject} appears in both the training and validation split")]
    Leakage { subject: String },

    #[error("class {class} has {count} subjects, need at least {folds} for {folds}-fold CV")]
    InsufficientClass {
        class: usize,
        count: usize,
        folds: usize,
    },

    #[error("dataset validation failed:\n{}", DisplayIssues(.0))]
    Dataset(Vec<SubjectIssue>),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(primitive: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            primitive,
            detail: detail.into(),
        }
    }

    /// Errors caused by bad user input rather than a failing environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

/// One problem found while loading a subject bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectIssue {
    pub subject: String,
    pub field: String,
    pub detail: String,
}

impl fmt::Display for SubjectIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "subject {} [{}]: {}",
            self.subject, self.field, self.detail
        )
    }
}

struct DisplayIssues<'a>(&'a [SubjectIssue]);

impl fmt::Display for DisplayIssues<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {issue}")?;
        }
        Ok(())
    }
}
