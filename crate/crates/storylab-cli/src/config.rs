//! Pipeline configuration: TOML schema, defaults, and aggregated validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use storylab_core::budget::{BudgetSpec, Track};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

/// One field that failed validation, with what was expected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub problem: String,
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  {}: {}", v.field, v.problem))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackChoice {
    StrictSmall,
    Strict,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub track: TrackChoice,
    /// Required when `track = "custom"`, ignored otherwise.
    #[serde(default)]
    pub budget_words: Option<u64>,
    pub paths: Paths,
    pub mix: Mix,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub prompts: PromptParams,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub selfbleu: SelfBleuParams,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub eval: Option<EvalParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Raw story dump: stories separated by `<|endoftext|>` lines.
    pub tiny_raw: PathBuf,
    pub baby_raw: PathBuf,
    /// All artifacts land here; created if missing.
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mix {
    /// Words sampled from the tiny-story source (m).
    pub tiny_words: u64,
    /// Words sampled from the baby source (b).
    pub baby_words: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub order: usize,
    pub vocab_cap: usize,
    pub discount: f64,
}

impl Default for ModelParams {
    fn default() -> ModelParams {
        ModelParams {
            order: 4,
            vocab_cap: 8192,
            discount: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptParams {
    pub ratio_low: f64,
    pub ratio_high: f64,
    /// Cap on the number of prompts (0 = no cap), taken in story-id order.
    pub max_prompts: usize,
}

impl Default for PromptParams {
    fn default() -> PromptParams {
        PromptParams {
            ratio_low: 0.15,
            ratio_high: 0.30,
            max_prompts: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub top_p: f64,
    pub temperature: f64,
    /// Completions generated per prompt; also the self-BLEU cache depth.
    pub completions_per_prompt: usize,
    pub max_new_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> GenerationParams {
        GenerationParams {
            top_p: 0.95,
            temperature: 1.0,
            completions_per_prompt: 5,
            max_new_tokens: 300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfBleuParams {
    pub k_values: Vec<usize>,
    pub max_n: usize,
}

impl Default for SelfBleuParams {
    fn default() -> SelfBleuParams {
        SelfBleuParams {
            k_values: vec![2, 5],
            max_n: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub sample: u64,
    pub prompts: u64,
    pub generate: u64,
}

impl Default for Seeds {
    fn default() -> Seeds {
        Seeds {
            sample: 1,
            prompts: 2,
            generate: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub pairs_path: PathBuf,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let config: PipelineConfig = toml::from_str(&raw)?;
        config.validate()?;
        Ok(config)
    }

    pub fn budget(&self) -> BudgetSpec {
        match self.track {
            TrackChoice::StrictSmall => BudgetSpec::strict_small(),
            TrackChoice::Strict => BudgetSpec::strict(),
            TrackChoice::Custom => BudgetSpec::custom(self.budget_words.unwrap_or(0)),
        }
    }

    pub fn track(&self) -> Track {
        self.budget().track
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut violations = Vec::new();
        let mut fail = |field: &str, problem: String| {
            violations.push(Violation {
                field: field.to_string(),
                problem,
            });
        };

        if self.track == TrackChoice::Custom && self.budget_words.is_none() {
            fail("budget_words", "required when track = \"custom\"".into());
        }
        let budget = self.budget().budget_words;
        if budget == 0 {
            fail("budget_words", "must be positive".into());
        } else {
            let nongenerated = self.mix.tiny_words + self.mix.baby_words;
            if nongenerated > budget {
                fail(
                    "mix",
                    format!(
                        "tiny_words + baby_words = {nongenerated} exceeds the {budget}-word budget"
                    ),
                );
            }
        }
        if self.mix.tiny_words == 0 {
            fail("mix.tiny_words", "must be positive".into());
        }
        if self.mix.baby_words == 0 {
            fail("mix.baby_words", "must be positive".into());
        }

        if self.model.order == 0 {
            fail("model.order", "must be at least 1".into());
        }
        if self.model.vocab_cap < 2 {
            fail("model.vocab_cap", "must be at least 2".into());
        }
        if !(self.model.discount > 0.0 && self.model.discount < 1.0) {
            fail(
                "model.discount",
                format!("must lie in (0, 1), got {}", self.model.discount),
            );
        }

        let (low, high) = (self.prompts.ratio_low, self.prompts.ratio_high);
        if !(low > 0.0 && low <= high && high < 1.0) {
            fail(
                "prompts",
                format!("ratios must satisfy 0 < ratio_low <= ratio_high < 1, got [{low}, {high}]"),
            );
        }

        if !(self.generation.top_p > 0.0 && self.generation.top_p <= 1.0) {
            fail(
                "generation.top_p",
                format!("must lie in (0, 1], got {}", self.generation.top_p),
            );
        }
        if !(self.generation.temperature > 0.0 && self.generation.temperature.is_finite()) {
            fail(
                "generation.temperature",
                format!("must be a positive real, got {}", self.generation.temperature),
            );
        }
        if self.generation.completions_per_prompt < 2 {
            fail(
                "generation.completions_per_prompt",
                "must be at least 2 (self-BLEU needs two completions)".into(),
            );
        }
        if self.generation.max_new_tokens == 0 {
            fail("generation.max_new_tokens", "must be at least 1".into());
        }

        if self.selfbleu.k_values.is_empty() {
            fail("selfbleu.k_values", "must be nonempty".into());
        }
        for &k in &self.selfbleu.k_values {
            if k < 2 || k > self.generation.completions_per_prompt {
                fail(
                    "selfbleu.k_values",
                    format!(
                        "k = {k} must lie in 2..=completions_per_prompt ({})",
                        self.generation.completions_per_prompt
                    ),
                );
            }
        }
        if self.selfbleu.max_n == 0 {
            fail("selfbleu.max_n", "must be at least 1".into());
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }
}
