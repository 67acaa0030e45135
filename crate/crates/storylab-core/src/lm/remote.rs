//! HTTP client for a remote generation/scoring service.
//!
//! Wire contract, JSON both ways:
//!
//! ```text
//! POST {base}/generate  {prompt, mode, top_p, temperature, max_new_tokens, seed}
//!                    -> {completion, token_count, finish_reason: "stop" | "length"}
//! POST {base}/score     {text} -> {log_prob}   (natural log, <= 0)
//! ```
//!
//! Transport failures, timeouts, and 5xx responses are retried with
//! exponential backoff up to `RetryPolicy::max_attempts`; 4xx responses and
//! malformed bodies are not, since repeating those cannot succeed.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Generation, GenerationPolicy, Generator, LmError, Scorer, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteLmConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteLmConfig {
    pub fn new(base_url: impl Into<String>) -> RemoteLmConfig {
        RemoteLmConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct RemoteLm {
    config: RemoteLmConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    mode: super::DecodeMode,
    top_p: f64,
    temperature: f64,
    max_new_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    completion: String,
    token_count: u32,
    finish_reason: String,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    log_prob: f64,
}

impl RemoteLm {
    pub fn new(config: RemoteLmConfig) -> RemoteLm {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteLm { config, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post_json<T: DeserializeOwned>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, LmError> {
        let url = self.url(path);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry.delay(attempt - 1));
            }
            match self.post_once(&url, body) {
                Ok(value) => return Ok(value),
                Err(err) => {
                    if !retryable(&err) {
                        return Err(err);
                    }
                    last_err = Some(err);
                }
            }
        }
        Err(last_err.expect("at least one attempt ran"))
    }

    fn post_once<T: DeserializeOwned>(
        &self,
        url: &str,
        body: &impl Serialize,
    ) -> Result<T, LmError> {
        let mut resp = match self.agent.post(url).send_json(body) {
            Ok(resp) => resp,
            Err(ureq::Error::Timeout(_)) => {
                return Err(LmError::Timeout {
                    message: format!("no response from {url}"),
                })
            }
            Err(err) => {
                return Err(LmError::Transport {
                    message: err.to_string(),
                })
            }
        };
        let code = resp.status().as_u16();
        if !(200..300).contains(&code) {
            let message = resp
                .body_mut()
                .read_to_string()
                .unwrap_or_default()
                .chars()
                .take(500)
                .collect();
            return Err(LmError::Remote { code, message });
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|err| LmError::MalformedResponse {
                message: err.to_string(),
            })
    }
}

fn retryable(err: &LmError) -> bool {
    match err {
        LmError::Transport { .. } | LmError::Timeout { .. } => true,
        LmError::Remote { code, .. } => *code >= 500,
        _ => false,
    }
}

impl Generator for RemoteLm {
    fn generate(&self, prompt: &str, policy: &GenerationPolicy) -> Result<Generation, LmError> {
        policy.validate()?;
        if prompt.trim().is_empty() {
            return Err(LmError::EmptyPrompt);
        }
        let request = GenerateRequest {
            prompt,
            mode: policy.mode,
            top_p: policy.top_p,
            temperature: policy.temperature,
            max_new_tokens: policy.max_new_tokens,
            seed: policy.seed,
        };
        let resp: GenerateResponse = self.post_json("generate", &request)?;
        let terminated_by = match resp.finish_reason.as_str() {
            "stop" => Termination::StopToken,
            "length" => Termination::MaxLen,
            other => {
                return Err(LmError::MalformedResponse {
                    message: format!("unknown finish_reason {other:?}"),
                })
            }
        };
        Ok(Generation {
            story_id: String::new(),
            completion_text: resp.completion,
            policy: policy.clone(),
            token_count: resp.token_count,
            terminated_by,
        })
    }
}

impl Scorer for RemoteLm {
    fn log_prob(&self, text: &str) -> Result<f64, LmError> {
        if text.trim().is_empty() {
            return Err(LmError::EmptyText);
        }
        let resp: ScoreResponse = self.post_json("score", &ScoreRequest { text })?;
        if !resp.log_prob.is_finite() || resp.log_prob > 0.0 {
            return Err(LmError::MalformedResponse {
                message: format!("log_prob must be finite and <= 0, got {}", resp.log_prob),
            });
        }
        Ok(resp.log_prob)
    }

    fn scorer_id(&self) -> String {
        format!("remote:{}", self.config.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_join_tolerates_trailing_slash() {
        let lm = RemoteLm::new(RemoteLmConfig::new("http://localhost:9000/"));
        assert_eq!(lm.url("score"), "http://localhost:9000/score");
        let lm = RemoteLm::new(RemoteLmConfig::new("http://localhost:9000"));
        assert_eq!(lm.url("generate"), "http://localhost:9000/generate");
    }

    #[test]
    fn backoff_doubles_per_attempt() {
        let retry = RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(10),
        };
        assert_eq!(retry.delay(0), Duration::from_millis(10));
        assert_eq!(retry.delay(1), Duration::from_millis(20));
        assert_eq!(retry.delay(2), Duration::from_millis(40));
    }

    #[test]
    fn only_transport_timeout_and_5xx_retry() {
        assert!(retryable(&LmError::Timeout {
            message: String::new()
        }));
        assert!(retryable(&LmError::Transport {
            message: String::new()
        }));
        assert!(retryable(&LmError::Remote {
            code: 503,
            message: String::new()
        }));
        assert!(!retryable(&LmError::Remote {
            code: 404,
            message: String::new()
        }));
        assert!(!retryable(&LmError::MalformedResponse {
            message: String::new()
        }));
    }
}
