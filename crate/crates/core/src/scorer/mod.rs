//! Scoring contract over model backends and synthetic baselines, plus the
//! resumable score store.

mod http;
mod store;
mod stub;
mod synthetic;

pub use http::{HttpBackend, RetryPolicy};
pub use store::{ScoreStore, StoreError, WorkItem};
pub use stub::StubBackend;
pub use synthetic::{ClassMasses, Direction, FullBiasLm, IdealLm, RandomLm, TableLm, TableWeights};

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{instantiate_fills, Fill, FillSet, Prompt};
use crate::templates::MASK;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("backend {endpoint} unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable {
        endpoint: String,
        attempts: u32,
        reason: String,
    },
    #[error("choice not scorable: {0}")]
    ChoiceNotScorable(String),
    #[error("empty text cannot be scored")]
    EmptyText,
    #[error("invalid synthetic weights: {0}")]
    InvalidWeights(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Masked,
    Causal,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Masked => "masked",
            Mode::Causal => "causal",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masked" => Ok(Mode::Masked),
            "causal" => Ok(Mode::Causal),
            other => Err(format!("unknown mode `{other}` (expected masked or causal)")),
        }
    }
}

/// Serializes non-finite floats as strings ("-Infinity"), which plain JSON
/// numbers cannot carry. Zero-mass synthetic fills have logprob -inf.
pub mod logprob_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("Infinity")
        } else {
            s.serialize_str("-Infinity")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "-Infinity" => Ok(f64::NEG_INFINITY),
                "Infinity" => Ok(f64::INFINITY),
                "NaN" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}

/// One scored candidate fill of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScore {
    pub scorer_id: String,
    pub prompt_id: String,
    pub fill_id: String,
    /// Mask-slot logprob (masked) or mean token logprob (causal).
    #[serde(with = "logprob_serde")]
    pub logprob: f64,
    /// Sum of token logprobs; equals `logprob` in masked mode.
    #[serde(with = "logprob_serde")]
    pub logprob_sum: f64,
    pub n_tokens: u32,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

// ---- wire protocol --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoicesRequest {
    pub text_masked: String,
    pub mask_token: String,
    pub choices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoicesResponse {
    pub logprobs: Vec<f64>,
    pub reduction: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResponse {
    pub token_logprobs: Vec<f64>,
    pub n_tokens: u32,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub model_id: String,
}

/// A model service speaking the wire protocol.
pub trait Backend: Send + Sync {
    fn score_choices(&self, req: &ChoicesRequest) -> Result<ChoicesResponse, ScoreError>;
    fn score_sequence(&self, req: &SequenceRequest) -> Result<SequenceResponse, ScoreError>;
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, ScoreError>;
}

/// Scores each choice in the mask slot of `prompt`.
pub fn score_masked(
    backend: &dyn Backend,
    scorer_id: &str,
    prompt: &Prompt,
    choices: &[Fill],
) -> Result<Vec<ChoiceScore>, ScoreError> {
    if choices.is_empty() {
        return Ok(Vec::new());
    }
    let req = ChoicesRequest {
        text_masked: prompt.text_masked.clone(),
        mask_token: MASK.to_string(),
        choices: choices.iter().map(|c| c.surface.clone()).collect(),
    };
    let resp = backend.score_choices(&req)?;
    if resp.logprobs.len() != choices.len() {
        return Err(ScoreError::Protocol(format!(
            "{} logprobs for {} choices",
            resp.logprobs.len(),
            choices.len()
        )));
    }
    if let Some(bad) = resp.logprobs.iter().find(|l| l.is_nan() || **l > 0.0) {
        return Err(ScoreError::Protocol(format!("masked logprob {bad} is not <= 0")));
    }
    Ok(choices
        .iter()
        .zip(&resp.logprobs)
        .map(|(c, &lp)| ChoiceScore {
            scorer_id: scorer_id.to_string(),
            prompt_id: prompt.prompt_id.clone(),
            fill_id: c.id.clone(),
            logprob: lp,
            logprob_sum: lp,
            n_tokens: 1,
            mode: Mode::Masked,
            reduction: Some(resp.reduction.clone()),
            model_id: Some(resp.model_id.clone()),
        })
        .collect())
}

/// Length-normalized sequence score.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalScore {
    pub mean: f64,
    pub sum: f64,
    pub n_tokens: u32,
    pub model_id: String,
}

/// Mean token logprob of `text`.
pub fn score_causal(backend: &dyn Backend, text: &str) -> Result<CausalScore, ScoreError> {
    if text.trim().is_empty() {
        return Err(ScoreError::EmptyText);
    }
    let resp = backend.score_sequence(&SequenceRequest {
        text: text.to_string(),
    })?;
    if resp.n_tokens == 0 || resp.token_logprobs.len() != resp.n_tokens as usize {
        return Err(ScoreError::Protocol(format!(
            "n_tokens {} with {} token logprobs",
            resp.n_tokens,
            resp.token_logprobs.len()
        )));
    }
    let sum: f64 = resp.token_logprobs.iter().sum();
    Ok(CausalScore {
        mean: sum / resp.n_tokens as f64,
        sum,
        n_tokens: resp.n_tokens,
        model_id: resp.model_id,
    })
}

/// Scores a prompt against its candidate fills.
pub trait Scorer: Send + Sync {
    fn id(&self) -> &str;
    fn mode(&self) -> Mode;
    fn score_prompt(&self, prompt: &Prompt, fills: &[Fill]) -> Result<Vec<ChoiceScore>, ScoreError>;
}

/// A [`Scorer`] backed by a model service.
pub struct ModelScorer {
    id: String,
    mode: Mode,
    backend: Box<dyn Backend>,
}

impl ModelScorer {
    pub fn new(id: impl Into<String>, mode: Mode, backend: Box<dyn Backend>) -> Self {
        ModelScorer {
            id: id.into(),
            mode,
            backend,
        }
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }
}

impl Scorer for ModelScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn score_prompt(&self, prompt: &Prompt, fills: &[Fill]) -> Result<Vec<ChoiceScore>, ScoreError> {
        match self.mode {
            Mode::Masked => score_masked(self.backend.as_ref(), &self.id, prompt, fills),
            Mode::Causal => {
                let candidates = instantiate_fills(prompt, fills)
                    .map_err(|e| ScoreError::ChoiceNotScorable(e.to_string()))?;
                candidates
                    .iter()
                    .map(|c| {
                        let s = score_causal(self.backend.as_ref(), &c.filled_text)?;
                        Ok(ChoiceScore {
                            scorer_id: self.id.clone(),
                            prompt_id: c.prompt_id.clone(),
                            fill_id: c.fill_id.clone(),
                            logprob: s.mean,
                            logprob_sum: s.sum,
                            n_tokens: s.n_tokens,
                            mode: Mode::Causal,
                            reduction: None,
                            model_id: Some(s.model_id),
                        })
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub cache_path: Option<std::path::PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            mode: Mode::Masked,
            endpoint: None,
            max_concurrency: default_concurrency(),
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy::default(),
            cache_path: None,
            seed: 0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.max_concurrency == 0 {
            return Err(ScoreError::Config("max_concurrency must be at least 1".into()));
        }
        if self.retry.attempts == 0 {
            return Err(ScoreError::Config("retry attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub concurrency: usize,
    /// Stop after this many prompts have been scored in this run.
    pub max_prompts: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub scored: usize,
    pub skipped: usize,
    /// (prompt id, error message) for prompts that failed after retries.
    pub failed: Vec<(String, String)>,
}

const CHUNK: usize = 2048;

/// Scores every prompt with incomplete entries in `store`. Prompts already
/// complete are skipped, so rerunning resumes an interrupted run. Failures
/// are collected per prompt; completed work stays in the store.
pub fn run_scoring(
    scorer: &dyn Scorer,
    prompts: impl Iterator<Item = Prompt>,
    fills: &FillSet,
    store: &ScoreStore,
    opts: &RunOptions,
) -> Result<RunStats, ScoreError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| ScoreError::Config(e.to_string()))?;
    let mut stats = RunStats::default();
    let failed = Mutex::new(Vec::new());
    let store_error: Mutex<Option<StoreError>> = Mutex::new(None);
    let halted = AtomicBool::new(false);

    let mut chunk: Vec<Prompt> = Vec::with_capacity(CHUNK);
    let mut prompts = prompts.peekable();
    while prompts.peek().is_some() {
        chunk.clear();
        while chunk.len() < CHUNK {
            match prompts.next() {
                Some(p) => {
                    if store.is_complete(scorer.id(), &p.prompt_id, fills) {
                        stats.skipped += 1;
                    } else {
                        chunk.push(p);
                    }
                }
                None => break,
            }
        }
        if let Some(max) = opts.max_prompts {
            let room = max.saturating_sub(stats.scored);
            chunk.truncate(room);
        }
        pool.install(|| {
            chunk.par_iter().for_each(|p| {
                if halted.load(Ordering::Relaxed) {
                    return;
                }
                match scorer.score_prompt(p, fills.fills()) {
                    Ok(scores) => {
                        for s in &scores {
                            if let Err(e) = store.put(s) {
                                halted.store(true, Ordering::Relaxed);
                                store_error.lock().expect("lock").get_or_insert(e);
                                return;
                            }
                        }
                    }
                    Err(e) => {
                        log::warn!("prompt {} failed: {e}", p.prompt_id);
                        failed.lock().expect("lock").push((p.prompt_id.clone(), e.to_string()));
                    }
                }
            })
        });
        if let Some(e) = store_error.lock().expect("lock").take() {
            return Err(e.into());
        }
        stats.scored += chunk.len();
        if opts.max_prompts.is_some_and(|m| stats.scored >= m) {
            break;
        }
    }
    store.flush()?;
    let mut failed = failed.into_inner().expect("lock");
    failed.sort();
    stats.scored -= failed.len();
    stats.failed = failed;
    Ok(stats)
}
