use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::BackendError;
use crate::translator::ExtractError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("index file {}: {message}", path.display())]
    IndexFormat { path: PathBuf, message: String },

    #[error("{}: not indexed; run `scribe index <project-root>` first", path.display())]
    NotIndexed { path: PathBuf },

    #[error("template {}: {message}", path.display())]
    Template { path: PathBuf, message: String },

    #[error("payload for <{tag}> contains a protocol tag literal `{literal}`; refusing to assemble prompt")]
    PayloadCollision { tag: &'static str, literal: String },

    #[error("invalid prompt file {}: {message}", path.display())]
    PromptFormat { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Extraction(#[from] ExtractError),

    #[error("refusing to overwrite existing {} (use --force)", .0.display())]
    Overwrite(PathBuf),

    #[error("{stage} stage failed: {source}")]
    Stage { stage: Stage, source: Box<Error> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Innermost error, skipping stage labels.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root_cause(),
            other => other,
        }
    }
}

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Draft,
    Assemble,
    Complete,
    Extract,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Draft => "draft",
            Stage::Assemble => "assemble",
            Stage::Complete => "complete",
            Stage::Extract => "extract",
            Stage::Write => "write",
        })
    }
}

/// Non-fatal problem found while reading a source file or directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { path: path.into(), line, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.path.display(), line, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}
