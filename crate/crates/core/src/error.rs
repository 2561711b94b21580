use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("bad magic bytes in embedding block")]
    BadMagic,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("row {row} has norm {norm} (expected 1 within 1e-4)")]
    NormViolation { row: usize, norm: f64 },

    #[error("row {row} is a zero vector")]
    ZeroVector { row: usize },

    #[error("row key {key:?} does not resolve against the corpus")]
    UnresolvedKey { key: String },

    #[error("unexpected block kind: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("tables are over different domains: {0}")]
    DomainMismatch(String),

    #[error("model {model:?} has a degenerate score distribution (sigma {sigma:e})")]
    DegenerateDistribution { model: String, sigma: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model mismatch: stats for {stats:?} applied to table {table:?}")]
    ModelMismatch { stats: String, table: String },

    #[error("ensemble member {0:?} has no score table")]
    MissingMember(String),

    #[error("invalid ensemble spec: {0}")]
    InvalidSpec(String),

    #[error("no (query, gallery) pair is shared by every table")]
    EmptyIntersection,

    #[error("mask retains no gallery rows")]
    EmptyMask,

    #[error("query {0:?} is missing from the ranking")]
    MissingQuery(String),

    #[error("vector lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("vector has zero rank variance")]
    ConstantVector,

    #[error("annotation probe index {0} is not among the requested probes")]
    UnknownProbe(u64),

    #[error("duplicate verdict for pair ({query}, {gallery}) by annotator {annotator:?}")]
    DuplicateVerdict {
        query: String,
        gallery: String,
        annotator: String,
    },

    #[error("cutoffs must be positive and strictly increasing, got {0:?}")]
    BadCutoffs(Vec<usize>),

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn parse(what: &'static str, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            reason: reason.into(),
        }
    }
}
