//! Core library for the story-corpus tooling: normalization and word-budget
//! accounting, prompt truncation, an n-gram language model with greedy and
//! nucleus decoding, diversity metrics, minimal-pair evaluation, balanced
//! batch streaming, and an LLM grading client.

pub mod batches;
pub mod budget;
pub mod corpus;
pub mod diversity;
pub mod fixture;
pub mod judge;
pub mod lm;
pub mod pairs;
pub mod prompts;
pub mod seed;

pub use batches::{balanced_batches, unbalanced_batches, Batch, BatchSpec, EpochPolicy};
pub use budget::{combine, sample_budget, BudgetError, BudgetSpec, Track};
pub use corpus::{Corpus, CorpusError, CorpusManifest, Document, Provenance, Source};
pub use diversity::{
    bleu, generate_completion_cache, self_bleu, self_bleu_curve, BleuConfig, CompletionCache,
    CurvePoint, DiversityError, PromptCompletions, SelfBleuCurve,
};
pub use judge::{
    build_judge_prompt, judge_batch, parse_judge_response, JudgeConfig, JudgeError, JudgeItem,
    JudgeScore, JudgeSummary,
};
pub use lm::{
    generate_k, train_ngram, DecodeMode, Generation, GenerationPolicy, Generator, LmError,
    NGramConfig, NGramModel, RemoteLm, RemoteLmConfig, Scorer,
};
pub use pairs::{load_pairs, score_pairs, EvalError, EvalReport, MinimalPair, Suite};
pub use prompts::{build_prompt_set, truncate_story, PromptError, PromptSet, StoryPrompt};
pub use seed::derive_seed;
