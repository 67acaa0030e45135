//! Budgeted corpus assembly: document-level sampling toward a word target and
//! combination of corpus parts under a non-generated word cap.
//!
//! Generated words are exempt from the cap and tracked separately; the cap
//! constrains only original/sampled material. The CLI surfaces that split so
//! nobody mistakes a 30M-word combined corpus for a budget violation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusManifest, Provenance};

#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("non-generated words {nongenerated_words} exceed budget {budget}")]
    BudgetExceeded {
        nongenerated_words: u64,
        budget: u64,
    },
    #[error("duplicate document id {id:?} across combined parts")]
    DuplicateId { id: String },
    #[error("combine requires at least one part")]
    NoParts,
}

pub const STRICT_SMALL_WORDS: u64 = 10_000_000;
pub const STRICT_WORDS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    StrictSmall,
    Strict,
    Custom,
}

/// A word cap for non-generated training material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub track: Track,
    pub budget_words: u64,
}

impl BudgetSpec {
    pub fn strict_small() -> BudgetSpec {
        BudgetSpec {
            track: Track::StrictSmall,
            budget_words: STRICT_SMALL_WORDS,
        }
    }

    pub fn strict() -> BudgetSpec {
        BudgetSpec {
            track: Track::Strict,
            budget_words: STRICT_WORDS,
        }
    }

    pub fn custom(budget_words: u64) -> BudgetSpec {
        BudgetSpec {
            track: Track::Custom,
            budget_words,
        }
    }
}

/// Draws a document-level subset totalling at most `target_words`.
///
/// Documents are visited in a seeded uniform shuffle; each is taken iff it
/// still fits, and oversized documents are skipped while the scan continues,
/// so the result lands as close under the target as the shuffle allows. The
/// output preserves scan order and is fully determined by
/// `(corpus, target_words, seed)`. A corpus holding fewer than `target_words`
/// words yields everything in shuffled order.
pub fn sample_budget(corpus: &Corpus, target_words: u64, seed: u64) -> Corpus {
    if target_words == 0 {
        return Corpus::new();
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let docs = corpus.documents();
    let mut taken = Corpus::new();
    let mut total = 0u64;
    for idx in order {
        let doc = &docs[idx];
        if total + doc.word_count() <= target_words {
            total += doc.word_count();
            // Ids are unique in the source corpus, so push cannot fail.
            taken.push(doc.clone()).expect("source ids are unique");
        }
    }
    taken
}

/// Concatenates `parts`, stamping each part's documents with its provenance,
/// and enforces the budget on non-generated words. Returns the combined
/// corpus together with a manifest that records the budget.
pub fn combine(
    parts: &[(&Corpus, Provenance)],
    budget: &BudgetSpec,
) -> Result<(Corpus, CorpusManifest), BudgetError> {
    if parts.is_empty() {
        return Err(BudgetError::NoParts);
    }
    let mut combined = Corpus::new();
    for (corpus, provenance) in parts {
        for doc in *corpus {
            combined
                .push(doc.clone().with_provenance(*provenance))
                .map_err(|_| BudgetError::DuplicateId {
                    id: doc.id().to_string(),
                })?;
        }
    }
    if combined.nongenerated_words() > budget.budget_words {
        return Err(BudgetError::BudgetExceeded {
            nongenerated_words: combined.nongenerated_words(),
            budget: budget.budget_words,
        });
    }
    let manifest = combined.manifest_with(Some(budget.budget_words), None);
    Ok((combined, manifest))
}
