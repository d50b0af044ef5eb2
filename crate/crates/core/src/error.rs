use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the library.
///
/// Variants are split into input/validation problems and runtime failures so
/// that front ends can map them onto distinct exit codes (see [`Error::is_validation`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("vocabulary for {lang} has {size} tokens; loosen min_df / max_df_ratio (at least 2 required)")]
    VocabularyTooSmall { lang: crate::Lang, size: usize },

    #[error("every document in {0} vectorized to zero in-vocabulary tokens")]
    AllDocumentsDropped(crate::Lang),

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("non-finite value in embedding row {row}")]
    NonFiniteEmbedding { row: usize },

    #[error("cannot stratify: label {label} in {lang} has a single document")]
    SingletonClass { lang: crate::Lang, label: i64 },

    #[error("rank deficient: only {nonzero} nonzero singular values but rank {rank} requested; use a smaller rank")]
    RankDeficient { rank: usize, nonzero: usize },

    #[error("only {distinct} distinct points for {clusters} clusters")]
    TooFewDistinctPoints { distinct: usize, clusters: usize },

    #[error("document `{0}` has a zero-norm vector")]
    ZeroNorm(String),

    #[error("zero-norm vector at {0}")]
    ZeroNormAt(String),

    #[error("missing {what} for document `{id}`")]
    MissingForDocument { what: &'static str, id: String },

    #[error("topic count mismatch: K = {topics} but cluster prior has T = {clusters}")]
    TopicClusterMismatch { topics: usize, clusters: usize },

    #[error("vocabulary hash mismatch for {lang}: checkpoint {expected}, supplied {found}")]
    VocabMismatch {
        lang: crate::Lang,
        expected: String,
        found: String,
    },

    #[error("non-finite {term} at epoch {epoch}, batch {batch}")]
    NonFinite {
        term: String,
        epoch: usize,
        batch: usize,
    },

    #[error("non-finite loss term `{0}`")]
    NonFiniteTerm(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("single-class training set (label {0}); at least two classes required")]
    SingleClass(i64),

    #[error("rating provider: {0}")]
    Provider(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    /// True when the error stems from bad or incompatible inputs rather than
    /// a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFinite { .. } | Error::NonFiniteTerm(_) | Error::Provider(_)
        )
    }
}
