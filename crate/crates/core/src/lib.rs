//! Socioeconomic bias evaluation for language models.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`lexicon`] loads the demographic, neutral, name and socioeconomic term
//!    inventories and composes intersectional target terms.
//! 2. [`templates`] holds the seed sentences and derives the perturbed template
//!    set (rule-generated variants plus curated files).
//! 3. [`corpus`] expands templates × target terms into masked prompts and
//!    candidate fills.
//! 4. [`scorer`] scores candidate fills against a backend (HTTP model shim or an
//!    in-process synthetic baseline) and persists results in a resumable store.
//! 5. [`metrics`], [`analysis`] and [`report`] turn scores into LMCS / PAR / ELS
//!    rows, intersection matrices, name-group comparisons and report files.

pub mod analysis;
pub mod config;
pub mod corpus;
mod digest;
pub mod error;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod scorer;
pub mod templates;

pub use error::Error;

use std::path::PathBuf;

/// Directory holding the curated data files that ship with the crate.
pub fn default_data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Default lexicon directory (`data/lexicon`).
pub fn default_lexicon_dir() -> PathBuf {
    default_data_dir().join("lexicon")
}

/// Default template directory (`data/templates`).
pub fn default_templates_dir() -> PathBuf {
    default_data_dir().join("templates")
}

/// Default LMCS irrelevant-word list.
pub fn default_irrelevant_path() -> PathBuf {
    default_data_dir().join("irrelevant.json")
}
