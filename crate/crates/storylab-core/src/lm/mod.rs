//! Language-model abstraction: scoring and generation behind small traits,
//! with a local n-gram implementation and a remote HTTP client.

mod ngram;
mod remote;
pub mod sampling;

pub use ngram::{train_ngram, NGramConfig, NGramModel, EOT, UNK};
pub use remote::{RemoteLm, RemoteLmConfig, RetryPolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("prompt is empty after tokenization")]
    EmptyPrompt,
    #[error("text is empty after tokenization")]
    EmptyText,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid generation policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("transport failure: {message}")]
    Transport { message: String },
    #[error("request timed out: {message}")]
    Timeout { message: String },
    #[error("malformed response: {message}")]
    MalformedResponse { message: String },
    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("unreadable model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Nucleus,
}

/// Decoding controls for one generation call.
///
/// `k` is the number of completions [`generate_k`] produces per prompt.
/// Greedy decoding ignores `top_p`, `temperature`, and `seed`; with `k > 1`
/// it simply repeats the same completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPolicy {
    pub mode: DecodeMode,
    pub top_p: f64,
    pub temperature: f64,
    pub k: u32,
    pub max_new_tokens: u32,
    pub seed: u64,
    pub stop_token: String,
}

impl Default for GenerationPolicy {
    fn default() -> GenerationPolicy {
        GenerationPolicy {
            mode: DecodeMode::Nucleus,
            top_p: 0.95,
            temperature: 1.0,
            k: 1,
            max_new_tokens: 300,
            seed: 0,
            stop_token: EOT.to_string(),
        }
    }
}

impl GenerationPolicy {
    pub fn greedy() -> GenerationPolicy {
        GenerationPolicy {
            mode: DecodeMode::Greedy,
            ..GenerationPolicy::default()
        }
    }

    pub fn nucleus(top_p: f64) -> GenerationPolicy {
        GenerationPolicy {
            top_p,
            ..GenerationPolicy::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> GenerationPolicy {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LmError::InvalidPolicy(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LmError::InvalidPolicy(format!(
                "temperature must be a positive real, got {}",
                self.temperature
            )));
        }
        if self.k == 0 {
            return Err(LmError::InvalidPolicy("k must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(LmError::InvalidPolicy(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if self.stop_token.is_empty() {
            return Err(LmError::InvalidPolicy("stop_token must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StopToken,
    MaxLen,
}

/// One completion, with the policy (seed included) that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub story_id: String,
    pub completion_text: String,
    pub policy: GenerationPolicy,
    pub token_count: u32,
    pub terminated_by: Termination,
}

/// Anything that can assign a total log probability to a text.
pub trait Scorer {
    /// Natural-log probability of `text` including the end-of-text
    /// transition. Always finite and at most 0.
    fn log_prob(&self, text: &str) -> Result<f64, LmError>;

    /// Stable identifier recorded in evaluation reports.
    fn scorer_id(&self) -> String;
}

/// Anything that can extend a prompt under a [`GenerationPolicy`].
pub trait Generator {
    fn generate(&self, prompt: &str, policy: &GenerationPolicy) -> Result<Generation, LmError>;
}

/// Produces `policy.k` completions for one prompt. Completion `i` runs under
/// a seed derived from `(policy.seed, story_id, i)`, so the set does not
/// depend on evaluation order and any single completion can be reproduced in
/// isolation.
pub fn generate_k<G: Generator + ?Sized>(
    model: &G,
    story_id: &str,
    prompt: &str,
    policy: &GenerationPolicy,
) -> Result<Vec<Generation>, LmError> {
    policy.validate()?;
    let mut out = Vec::with_capacity(policy.k as usize);
    for i in 0..policy.k {
        let mut per_call = policy.clone();
        per_call.seed = derive_seed(policy.seed, story_id, u64::from(i));
        let mut generation = model.generate(prompt, &per_call)?;
        generation.story_id = story_id.to_string();
        out.push(generation);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_is_valid_and_matches_documented_defaults() {
        let p = GenerationPolicy::default();
        p.validate().unwrap();
        assert_eq!(p.top_p, 0.95);
        assert_eq!(p.temperature, 1.0);
        assert_eq!(p.max_new_tokens, 300);
        assert_eq!(p.stop_token, "<eot>");
    }

    #[test]
    fn policy_validation_catches_each_field() {
        let base = GenerationPolicy::default();
        for bad in [
            GenerationPolicy { top_p: 0.0, ..base.clone() },
            GenerationPolicy { top_p: 1.1, ..base.clone() },
            GenerationPolicy { temperature: 0.0, ..base.clone() },
            GenerationPolicy { temperature: f64::NAN, ..base.clone() },
            GenerationPolicy { k: 0, ..base.clone() },
            GenerationPolicy { max_new_tokens: 0, ..base.clone() },
            GenerationPolicy { stop_token: String::new(), ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should not validate");
        }
    }
}
