use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::corpus::CorpusError;
use crate::lexicon::LexiconError;
use crate::metrics::MetricError;
use crate::report::ReportError;
use crate::scorer::{ScoreError, StoreError};
use crate::templates::TemplateError;

/// Crate-level error, one variant per pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category code used in CLI error messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Lexicon(_) => "LEXICON",
            Error::Template(_) => "TEMPLATE",
            Error::Corpus(_) => "CORPUS",
            Error::Score(_) => "SCORE",
            Error::Store(_) => "STORE",
            Error::Metric(_) => "METRIC",
            Error::Analysis(_) => "ANALYSIS",
            Error::Report(_) => "REPORT",
            Error::Config(_) => "CONFIG",
            Error::Io(_) => "IO",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Lexicon(_) => 10,
            Error::Template(_) => 11,
            Error::Corpus(_) => 12,
            Error::Score(_) => 13,
            Error::Store(_) => 14,
            Error::Metric(_) => 15,
            Error::Analysis(_) => 16,
            Error::Report(_) => 17,
            Error::Io(_) => 74,
        }
    }
}
