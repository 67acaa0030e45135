//! Prompt construction: truncate each story to a randomly drawn fraction of
//! its length and keep the prefix as a generation prompt.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, PAR};
use crate::seed::derive_seed;

/// Stories shorter than this cannot be truncated meaningfully: the prefix and
/// the held-out remainder must both be nonempty with room to spare.
pub const MIN_STORY_WORDS: u64 = 4;

pub const DEFAULT_RATIO_LOW: f64 = 0.15;
pub const DEFAULT_RATIO_HIGH: f64 = 0.30;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("story {id:?} has {words} words; need at least {MIN_STORY_WORDS}")]
    StoryTooShort { id: String, words: u64 },
    #[error("invalid ratio bounds [{low}, {high}]; need 0 < low <= high < 1")]
    InvalidBounds { low: f64, high: f64 },
}

/// A word-boundary prefix of one story. `ratio` is the fraction that was
/// drawn; the realized fraction is `prompt_words / original_words` and can
/// differ from `ratio` by up to one word of rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryPrompt {
    pub story_id: String,
    pub prompt_text: String,
    pub ratio: f64,
    pub prompt_words: u64,
    pub original_words: u64,
}

impl StoryPrompt {
    pub fn realized_ratio(&self) -> f64 {
        self.prompt_words as f64 / self.original_words as f64
    }
}

/// The prompts drawn from a corpus plus the count of stories too short to
/// use.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PromptSet {
    pub prompts: Vec<StoryPrompt>,
    pub skipped: u64,
}

fn check_bounds(low: f64, high: f64) -> Result<(), PromptError> {
    if !(low > 0.0 && low <= high && high < 1.0) {
        return Err(PromptError::InvalidBounds { low, high });
    }
    Ok(())
}

/// Keeps the first `round(r * word_count)` words of `doc`, with
/// `r ~ Uniform[ratio_low, ratio_high]` drawn from the seeded generator and
/// the kept count clamped to `[1, word_count - 1]`.
///
/// `[PAR]` tokens do not count as words but are retained inside the prefix;
/// the cut always lands at the end of a word, so `prompt_text` is an exact
/// substring prefix of the story.
pub fn truncate_story(
    doc: &Document,
    ratio_low: f64,
    ratio_high: f64,
    seed: u64,
) -> Result<StoryPrompt, PromptError> {
    check_bounds(ratio_low, ratio_high)?;
    let n = doc.word_count();
    if n < MIN_STORY_WORDS {
        return Err(PromptError::StoryTooShort {
            id: doc.id().to_string(),
            words: n,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let ratio = rng.random_range(ratio_low..=ratio_high);
    let keep = ((ratio * n as f64).round() as u64).clamp(1, n - 1);

    let text = doc.text();
    let mut words_seen = 0u64;
    let mut end = 0usize;
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                if &text[s..i] != PAR {
                    words_seen += 1;
                    if words_seen == keep {
                        end = i;
                        break;
                    }
                }
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if words_seen < keep {
        if let Some(s) = start {
            if &text[s..] != PAR {
                words_seen += 1;
            }
        }
        debug_assert_eq!(words_seen, keep);
        end = text.len();
    }

    Ok(StoryPrompt {
        story_id: doc.id().to_string(),
        prompt_text: text[..end].to_string(),
        ratio,
        prompt_words: keep,
        original_words: n,
    })
}

/// One prompt per eligible document. Each story's randomness comes from a
/// seed derived from `(seed, story_id)`, and the output is sorted by story
/// id, so the set is invariant under corpus reordering. Stories below
/// [`MIN_STORY_WORDS`] are skipped and counted.
pub fn build_prompt_set(
    corpus: &Corpus,
    ratio_low: f64,
    ratio_high: f64,
    seed: u64,
) -> Result<PromptSet, PromptError> {
    check_bounds(ratio_low, ratio_high)?;
    let mut set = PromptSet::default();
    for doc in corpus {
        if doc.word_count() < MIN_STORY_WORDS {
            set.skipped += 1;
            continue;
        }
        let doc_seed = derive_seed(seed, doc.id(), 0);
        set.prompts
            .push(truncate_story(doc, ratio_low, ratio_high, doc_seed)?);
    }
    set.prompts.sort_by(|a, b| a.story_id.cmp(&b.story_id));
    Ok(set)
}
