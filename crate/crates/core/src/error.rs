use thiserror::Error;

use crate::{
    combine::CombineError, corpus::CorpusError, diffparse::DiffError, embed::EmbedError,
    eval::EvalError, explain::ExplainError, featureio::FeatureIoError, filter::FilterError,
    learn::LearnError,
};

/// Crate-level error, tagged with the module that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("diffparse: {0}")]
    Diff(#[from] DiffError),
    #[error("embed: {0}")]
    Embed(#[from] EmbedError),
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("learn: {0}")]
    Learn(#[from] LearnError),
    #[error("combine: {0}")]
    Combine(#[from] CombineError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("explain: {0}")]
    Explain(#[from] ExplainError),
    #[error("features: {0}")]
    FeatureIo(#[from] FeatureIoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short module tag used by the CLI when categorising failures.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Corpus(_) => "corpus",
            Error::Diff(_) => "diffparse",
            Error::Embed(_) => "embed",
            Error::Filter(_) => "filter",
            Error::Learn(_) => "learn",
            Error::Combine(_) => "combine",
            Error::Eval(_) => "eval",
            Error::Explain(_) => "explain",
            Error::FeatureIo(_) => "features",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
