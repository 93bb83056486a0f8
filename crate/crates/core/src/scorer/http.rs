//! Blocking HTTP client for the model shim.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    Backend, ChoicesRequest, ChoicesResponse, GenerateRequest, GenerateResponse, ScoreError,
    SequenceRequest, SequenceResponse,
};

/// Exponential backoff: attempt `k` (0-based) waits `base_delay_ms * 2^k`
/// before the next try, capped at `max_delay_ms`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 5,
            base_delay_ms: 200,
            max_delay_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

enum Failure {
    Retryable(String),
    Fatal(ScoreError),
}

pub struct HttpBackend {
    endpoint: String,
    client: Client,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(endpoint: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, ScoreError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScoreError::Config(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            client,
            retry,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn once<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, Failure> {
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        match resp.status() {
            s if s.is_success() => resp.json::<Resp>().map_err(|e| {
                Failure::Fatal(ScoreError::Protocol(format!("bad response from {url}: {e}")))
            }),
            StatusCode::SERVICE_UNAVAILABLE => Err(Failure::Retryable("HTTP 503".into())),
            StatusCode::UNPROCESSABLE_ENTITY => Err(Failure::Fatal(ScoreError::ChoiceNotScorable(
                resp.text().unwrap_or_default(),
            ))),
            s => Err(Failure::Fatal(ScoreError::BackendUnavailable {
                endpoint: self.endpoint.clone(),
                attempts: 1,
                reason: format!("HTTP {s}"),
            })),
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ScoreError> {
        let url = format!("{}{path}", self.endpoint);
        let mut last = String::new();
        for attempt in 0..self.retry.attempts {
            match self.once(&url, body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(reason)) => {
                    log::debug!("{url} attempt {} failed: {reason}", attempt + 1);
                    last = reason;
                    if attempt + 1 < self.retry.attempts {
                        thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(ScoreError::BackendUnavailable {
            endpoint: self.endpoint.clone(),
            attempts: self.retry.attempts,
            reason: last,
        })
    }
}

impl Backend for HttpBackend {
    fn score_choices(&self, req: &ChoicesRequest) -> Result<ChoicesResponse, ScoreError> {
        self.post("/v1/score/choices", req)
    }

    fn score_sequence(&self, req: &SequenceRequest) -> Result<SequenceResponse, ScoreError> {
        self.post("/v1/score/sequence", req)
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, ScoreError> {
        self.post("/v1/generate", req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            attempts: 5,
            base_delay_ms: 100,
            max_delay_ms: 500,
        };
        let d: Vec<u64> = (0..5).map(|k| p.delay(k).as_millis() as u64).collect();
        assert_eq!(d, [100, 200, 400, 500, 500]);
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let b = HttpBackend::new(
            "http://127.0.0.1:9",
            Duration::from_millis(200),
            RetryPolicy {
                attempts: 3,
                base_delay_ms: 1,
                max_delay_ms: 1,
            },
        )
        .unwrap();
        match b.score_sequence(&SequenceRequest { text: "x".into() }) {
            Err(ScoreError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
