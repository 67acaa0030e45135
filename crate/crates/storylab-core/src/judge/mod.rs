//! Grades generated story completions with a hosted chat model.
//!
//! Each item becomes one chat request holding two user turns: the story with
//! the `***` separator plus an assessment request, then the grading request.
//! The response text is parsed for three `<Category>: n/10` grades and an
//! age-group letter. Parsing fails with a typed error rather than guessing;
//! per-item failures are recorded in the outcome, never aborting the batch.
//!
//! The judge model is configuration (endpoint URL and model name), and the
//! API key comes from the `STORYLAB_JUDGE_API_KEY` environment variable.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use crate::lm::RetryPolicy;

pub const JUDGE_API_KEY_VAR: &str = "STORYLAB_JUDGE_API_KEY";

/// The two user turns, with `{{STORY}}` substituted in the first.
const TURN_ONE: &str = include_str!("assets/turn_one.txt");
const TURN_TWO: &str = include_str!("assets/turn_two.txt");
const STORY_SLOT: &str = "{{STORY}}";
const SEPARATOR: &str = "***";

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("{field} must be nonempty")]
    EmptyField { field: &'static str },
    #[error("{field} contains the reserved separator \"***\"")]
    SeparatorCollision { field: &'static str },
    #[error("no API key: set {JUDGE_API_KEY_VAR}")]
    AuthMissing,
    #[error("batch needs {calls_needed} calls but max_calls is {max_calls}")]
    BudgetExceeded { calls_needed: u64, max_calls: u64 },
    #[error("no grade found for {category}")]
    MissingGrade { category: &'static str },
    #[error("{category} grade {value} outside 1-10")]
    GradeOutOfRange { category: &'static str, value: u32 },
    #[error("no age group letter found")]
    MissingAgeGroup,
    #[error("transport: {message}")]
    Transport { message: String },
    #[error("timeout: {message}")]
    Timeout { message: String },
    #[error("malformed response: {message}")]
    MalformedResponse { message: String },
    #[error("endpoint returned {code}: {message}")]
    Remote { code: u16, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeItem {
    story_beginning: String,
    completion: String,
}

impl JudgeItem {
    pub fn new(
        story_beginning: impl Into<String>,
        completion: impl Into<String>,
    ) -> Result<JudgeItem, JudgeError> {
        let item = JudgeItem {
            story_beginning: story_beginning.into(),
            completion: completion.into(),
        };
        for (field, text) in [
            ("story_beginning", &item.story_beginning),
            ("completion", &item.completion),
        ] {
            if text.trim().is_empty() {
                return Err(JudgeError::EmptyField { field });
            }
            if text.contains(SEPARATOR) {
                return Err(JudgeError::SeparatorCollision { field });
            }
        }
        Ok(item)
    }

    pub fn story_beginning(&self) -> &str {
        &self.story_beginning
    }

    pub fn completion(&self) -> &str {
        &self.completion
    }

    /// Prescribed beginning, the separator, then the student's completion.
    fn story(&self) -> String {
        format!("{} {SEPARATOR}{}", self.story_beginning, self.completion)
    }
}

/// The full two-turn prompt as one string (turns separated by a blank line).
/// Byte-identical across runs for identical items.
pub fn build_judge_prompt(item: &JudgeItem) -> String {
    let (one, two) = judge_turns(item);
    format!("{one}\n\n{two}")
}

/// The two chat turns sent as separate user messages.
pub fn judge_turns(item: &JudgeItem) -> (String, String) {
    let one = TURN_ONE
        .trim_end()
        .replacen(STORY_SLOT, &item.story(), 1);
    (one, TURN_TWO.trim_end().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgeGroup {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl AgeGroup {
    pub fn description(self) -> &'static str {
        match self {
            AgeGroup::A => "3 or under",
            AgeGroup::B => "4-5",
            AgeGroup::C => "6-7",
            AgeGroup::D => "8-9",
            AgeGroup::E => "10-12",
            AgeGroup::F => "13-16",
        }
    }

    fn from_letter(letter: char) -> Option<AgeGroup> {
        Some(match letter {
            'A' => AgeGroup::A,
            'B' => AgeGroup::B,
            'C' => AgeGroup::C,
            'D' => AgeGroup::D,
            'E' => AgeGroup::E,
            'F' => AgeGroup::F,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub grammar: u8,
    pub creativity: u8,
    pub consistency: u8,
    pub age_group: AgeGroup,
    pub raw_response: String,
}

fn grade_regex(category: &'static str) -> Regex {
    // "<Category>[junk]: 7/10" with whatever list numbering or prose sits
    // around it; the digits must belong to an n/10 grade.
    Regex::new(&format!(r"(?i){category}[^0-9/]*?(\d{{1,2}})\s*/\s*10")).unwrap()
}

fn grade_patterns() -> &'static [(&'static str, Regex); 3] {
    static PATTERNS: OnceLock<[(&'static str, Regex); 3]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            ("grammar", grade_regex("grammar")),
            ("creativity", grade_regex("creativity")),
            ("consistency", grade_regex("consistency")),
        ]
    })
}

fn age_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    // "Age group estimate: B: 4-5 years old" and terser variants. The letter
    // must be an uppercase A-F after the colon.
    PATTERN.get_or_init(|| Regex::new(r"(?i:age\s*group)[^:\n]*:\s*([A-F])\b").unwrap())
}

/// Extracts the three grades and the age group from a judge response.
pub fn parse_judge_response(text: &str) -> Result<JudgeScore, JudgeError> {
    let mut grades = [0u8; 3];
    for (i, (category, pattern)) in grade_patterns().iter().enumerate() {
        let caps = pattern
            .captures(text)
            .ok_or(JudgeError::MissingGrade { category })?;
        let value: u32 = caps[1].parse().expect("regex guarantees 1-2 digits");
        if !(1..=10).contains(&value) {
            return Err(JudgeError::GradeOutOfRange { category, value });
        }
        grades[i] = value as u8;
    }
    let age_caps = age_pattern()
        .captures(text)
        .ok_or(JudgeError::MissingAgeGroup)?;
    let letter = age_caps[1].chars().next().expect("single capture char");
    let age_group = AgeGroup::from_letter(letter).ok_or(JudgeError::MissingAgeGroup)?;
    Ok(JudgeScore {
        grammar: grades[0],
        creativity: grades[1],
        consistency: grades[2],
        age_group,
        raw_response: text.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct JudgeConfig {
    pub endpoint_url: String,
    pub model: String,
    /// Bearer token; absent means judge_batch fails upfront with AuthMissing.
    pub api_key: Option<String>,
    /// Sampling temperature the endpoint should use.
    pub temperature: f64,
    /// Hard cap on HTTP calls for the whole batch, checked before any call.
    pub max_calls: Option<u64>,
    /// Minimum spacing between call starts.
    pub min_call_interval: Duration,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl JudgeConfig {
    pub fn new(endpoint_url: impl Into<String>, model: impl Into<String>) -> JudgeConfig {
        JudgeConfig {
            endpoint_url: endpoint_url.into(),
            model: model.into(),
            api_key: None,
            temperature: 1.0,
            max_calls: None,
            min_call_interval: Duration::ZERO,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads the API key from `STORYLAB_JUDGE_API_KEY`.
    pub fn from_env(endpoint_url: impl Into<String>, model: impl Into<String>) -> JudgeConfig {
        JudgeConfig {
            api_key: std::env::var(JUDGE_API_KEY_VAR).ok(),
            ..JudgeConfig::new(endpoint_url, model)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeSummary {
    /// Means over successfully parsed items; absent when nothing parsed.
    pub mean_grammar: Option<f64>,
    pub mean_creativity: Option<f64>,
    pub mean_consistency: Option<f64>,
    /// Successfully parsed items.
    pub n_items: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub index: usize,
    pub score: Option<JudgeScore>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub items: Vec<ItemOutcome>,
    pub summary: JudgeSummary,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    text: String,
}

struct JudgeClient {
    config: JudgeConfig,
    agent: ureq::Agent,
    last_call: Option<Instant>,
}

impl JudgeClient {
    fn new(config: JudgeConfig) -> JudgeClient {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JudgeClient {
            config,
            agent,
            last_call: None,
        }
    }

    fn throttle(&mut self) {
        if let Some(last) = self.last_call {
            let next_allowed = last + self.config.min_call_interval;
            let now = Instant::now();
            if next_allowed > now {
                std::thread::sleep(next_allowed - now);
            }
        }
        self.last_call = Some(Instant::now());
    }

    fn call(&mut self, item: &JudgeItem, key: &str) -> Result<String, JudgeError> {
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry.base_delay * 2u32.pow(attempt - 1));
            }
            self.throttle();
            match self.call_once(item, key) {
                Ok(text) => return Ok(text),
                Err(err) => {
                    let retry = matches!(
                        err,
                        JudgeError::Transport { .. }
                            | JudgeError::Timeout { .. }
                            | JudgeError::Remote { code: 500.., .. }
                    );
                    if !retry {
                        return Err(err);
                    }
                    last_err = Some(err);
                }
            }
        }
        Err(last_err.expect("at least one attempt ran"))
    }

    fn call_once(&self, item: &JudgeItem, key: &str) -> Result<String, JudgeError> {
        let (one, two) = judge_turns(item);
        let request = ChatRequest {
            model: &self.config.model,
            messages: vec![
                ChatMessage {
                    role: "user",
                    content: &one,
                },
                ChatMessage {
                    role: "user",
                    content: &two,
                },
            ],
            temperature: self.config.temperature,
        };
        let mut resp = match self
            .agent
            .post(&self.config.endpoint_url)
            .header("authorization", &format!("Bearer {key}"))
            .send_json(&request)
        {
            Ok(resp) => resp,
            Err(ureq::Error::Timeout(_)) => {
                return Err(JudgeError::Timeout {
                    message: format!("no response from {}", self.config.endpoint_url),
                })
            }
            Err(err) => {
                return Err(JudgeError::Transport {
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
            return Err(JudgeError::Remote { code, message });
        }
        let parsed: ChatResponse =
            resp.body_mut()
                .read_json()
                .map_err(|err| JudgeError::MalformedResponse {
                    message: err.to_string(),
                })?;
        Ok(parsed.text)
    }
}

/// Judges every item with one chat call each. Fails upfront on missing
/// credentials or a blown call budget; after that, individual call or parse
/// failures land in that item's outcome and the batch continues.
pub fn judge_batch(config: JudgeConfig, items: &[JudgeItem]) -> Result<JudgeOutcome, JudgeError> {
    let key = config.api_key.clone().ok_or(JudgeError::AuthMissing)?;
    let calls_needed = items.len() as u64;
    if let Some(max_calls) = config.max_calls {
        if calls_needed > max_calls {
            return Err(JudgeError::BudgetExceeded {
                calls_needed,
                max_calls,
            });
        }
    }
    let mut client = JudgeClient::new(config);
    let mut outcomes = Vec::with_capacity(items.len());
    let mut sums = [0u64; 3];
    let mut parsed = 0u64;
    let mut failures = 0u64;
    for (index, item) in items.iter().enumerate() {
        let result = client
            .call(item, &key)
            .and_then(|text| parse_judge_response(&text));
        match result {
            Ok(score) => {
                sums[0] += score.grammar as u64;
                sums[1] += score.creativity as u64;
                sums[2] += score.consistency as u64;
                parsed += 1;
                outcomes.push(ItemOutcome {
                    index,
                    score: Some(score),
                    error: None,
                });
            }
            Err(err) => {
                failures += 1;
                outcomes.push(ItemOutcome {
                    index,
                    score: None,
                    error: Some(err.to_string()),
                });
            }
        }
    }
    let mean = |sum: u64| {
        if parsed == 0 {
            None
        } else {
            Some(sum as f64 / parsed as f64)
        }
    };
    Ok(JudgeOutcome {
        items: outcomes,
        summary: JudgeSummary {
            mean_grammar: mean(sums[0]),
            mean_creativity: mean(sums[1]),
            mean_consistency: mean(sums[2]),
            n_items: parsed,
            failures,
        },
    })
}
