//! Deterministic in-process backend driven by a mass table.

use std::collections::BTreeMap;

use super::{
    Backend, ChoicesRequest, ChoicesResponse, GenerateRequest, GenerateResponse, ScoreError,
    SequenceRequest, SequenceResponse,
};
use crate::digest::sha256_hex;

/// Masses are looked up by choice string first, then by the choice's class
/// (from `classes`). Choice logprobs are `ln(mass)` as configured, not
/// renormalized. Sequence scoring gives each whitespace token `ln(mass)` when
/// the token has a mass and `default_token_logprob` otherwise.
#[derive(Debug, Clone)]
pub struct StubBackend {
    pub masses: BTreeMap<String, f64>,
    pub classes: BTreeMap<String, String>,
    pub default_token_logprob: f64,
    pub model_id: String,
}

impl StubBackend {
    pub fn new(masses: BTreeMap<String, f64>) -> Self {
        StubBackend {
            masses,
            classes: BTreeMap::new(),
            default_token_logprob: -1.0,
            model_id: "stub".into(),
        }
    }

    pub fn with_classes(mut self, classes: BTreeMap<String, String>) -> Self {
        self.classes = classes;
        self
    }

    fn mass(&self, choice: &str) -> Option<f64> {
        self.masses.get(choice).copied().or_else(|| {
            self.classes
                .get(choice)
                .and_then(|c| self.masses.get(c))
                .copied()
        })
    }
}

impl Backend for StubBackend {
    fn score_choices(&self, req: &ChoicesRequest) -> Result<ChoicesResponse, ScoreError> {
        let logprobs = req
            .choices
            .iter()
            .map(|c| {
                self.mass(c)
                    .map(f64::ln)
                    .ok_or_else(|| ScoreError::ChoiceNotScorable(format!("no mass for `{c}`")))
            })
            .collect::<Result<_, _>>()?;
        Ok(ChoicesResponse {
            logprobs,
            reduction: "sum_subtoken_logprobs".into(),
            model_id: self.model_id.clone(),
        })
    }

    fn score_sequence(&self, req: &SequenceRequest) -> Result<SequenceResponse, ScoreError> {
        let token_logprobs: Vec<f64> = req
            .text
            .split_whitespace()
            .map(|tok| {
                let word = tok.trim_matches(|c: char| !c.is_alphanumeric() && c != '-');
                self.mass(word).map_or(self.default_token_logprob, f64::ln)
            })
            .collect();
        if token_logprobs.is_empty() {
            return Err(ScoreError::EmptyText);
        }
        Ok(SequenceResponse {
            n_tokens: token_logprobs.len() as u32,
            token_logprobs,
            model_id: self.model_id.clone(),
        })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, ScoreError> {
        let tag = sha256_hex(&[&req.prompt, &req.seed.to_string()]);
        Ok(GenerateResponse {
            text: format!(" [stub continuation {}]", &tag[..12]),
            model_id: self.model_id.clone(),
        })
    }
}
