//! Corpus-level BLEU and Self-BLEU diversity measurement.
//!
//! BLEU here is the classic corpus-free, single-candidate form: clipped
//! modified n-gram precision against the per-gram maximum across references,
//! a uniform geometric mean over n = 1..=max_n, and the brevity penalty
//! exp(1 - r/c) applied when the candidate is shorter than the closest
//! reference length (length ties prefer the shorter reference). Any zero
//! n-gram precision zeroes the whole score; there is no smoothing.
//!
//! Self-BLEU of a set scores each member against all the others as
//! references and averages. Identical members give 1.0 (100 in percent
//! scale); members sharing no n-gram give 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::lm::{generate_k, GenerationPolicy, Generator, LmError};
use crate::prompts::StoryPrompt;

#[derive(Debug, thiserror::Error)]
pub enum DiversityError {
    #[error("need at least two generations for self-BLEU, got {0}")]
    TooFewGenerations(usize),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("k values must lie in 2..=k_max ({k_max}), got {k}")]
    KOutOfRange { k: usize, k_max: usize },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Unit,
    Percent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub scale: Scale,
}

impl Default for BleuConfig {
    fn default() -> BleuConfig {
        BleuConfig {
            max_n: 4,
            scale: Scale::Percent,
        }
    }
}

impl BleuConfig {
    fn validate(&self) -> Result<(), DiversityError> {
        if self.max_n == 0 {
            return Err(DiversityError::InvalidConfig("max_n must be at least 1".into()));
        }
        Ok(())
    }

    fn rescale(&self, unit: f64) -> f64 {
        match self.scale {
            Scale::Unit => unit,
            Scale::Percent => unit * 100.0,
        }
    }
}

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<&[u32], u64> {
    let mut counts: HashMap<&[u32], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Single-candidate BLEU on the unit scale, regardless of `config.scale`.
/// Tokenization is whitespace word splitting, the same as corpus word counts.
pub fn bleu(candidate: &str, references: &[&str], config: &BleuConfig) -> Result<f64, DiversityError> {
    config.validate()?;
    if references.is_empty() {
        return Err(DiversityError::EmptyInput("no references".into()));
    }
    let mut interner = Interner::default();
    let cand = interner.encode(candidate);
    let refs: Vec<Vec<u32>> = references.iter().map(|r| interner.encode(r)).collect();
    if cand.is_empty() {
        return Err(DiversityError::EmptyInput("empty candidate".into()));
    }
    if refs.iter().any(|r| r.is_empty()) {
        return Err(DiversityError::EmptyInput("empty reference".into()));
    }
    Ok(bleu_tokens(&cand, &refs, config.max_n))
}

fn bleu_tokens(cand: &[u32], refs: &[Vec<u32>], max_n: usize) -> f64 {
    let mut log_sum = 0.0f64;
    for n in 1..=max_n {
        let cand_grams = ngram_counts(cand, n);
        let total: u64 = cand_grams.values().sum();
        if total == 0 {
            // Candidate shorter than n: no n-grams to match.
            return 0.0;
        }
        // Per-gram maximum count across references.
        let mut ref_max: HashMap<&[u32], u64> = HashMap::new();
        for r in refs {
            for (gram, count) in ngram_counts(r, n) {
                let slot = ref_max.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        let mut clipped = 0u64;
        for (gram, &count) in &cand_grams {
            clipped += count.min(ref_max.get(gram).copied().unwrap_or(0));
        }
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let precision = (log_sum / max_n as f64).exp();
    precision * brevity_penalty(cand.len(), refs)
}

fn brevity_penalty(cand_len: usize, refs: &[Vec<u32>]) -> f64 {
    // Closest reference length; ties prefer the shorter reference.
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| {
            let diff = (len as i64 - cand_len as i64).unsigned_abs();
            (diff, len)
        })
        .expect("at least one reference");
    if cand_len >= r {
        1.0
    } else {
        (1.0 - r as f64 / cand_len as f64).exp()
    }
}

/// Mean leave-one-out BLEU over the set, on `config.scale`.
pub fn self_bleu(generations: &[&str], config: &BleuConfig) -> Result<f64, DiversityError> {
    config.validate()?;
    if generations.len() < 2 {
        return Err(DiversityError::TooFewGenerations(generations.len()));
    }
    let mut interner = Interner::default();
    let encoded: Vec<Vec<u32>> = generations.iter().map(|g| interner.encode(g)).collect();
    if let Some(i) = encoded.iter().position(|t| t.is_empty()) {
        return Err(DiversityError::EmptyInput(format!(
            "generation {i} has no tokens"
        )));
    }
    let mut sum = 0.0f64;
    for i in 0..encoded.len() {
        let refs: Vec<Vec<u32>> = encoded
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, t)| t.clone())
            .collect();
        sum += bleu_tokens(&encoded[i], &refs, config.max_n);
    }
    Ok(config.rescale(sum / encoded.len() as f64))
}

#[derive(Default)]
struct Interner {
    index: HashMap<String, u32>,
}

impl Interner {
    fn encode(&mut self, text: &str) -> Vec<u32> {
        tokenize(text)
            .map(|tok| {
                let next = self.index.len() as u32;
                *self.index.entry(tok.to_string()).or_insert(next)
            })
            .collect()
    }
}

/// All completions generated for one prompt, in generation index order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptCompletions {
    pub story_id: String,
    pub completions: Vec<String>,
}

/// The cached completions every curve point is computed from: `k_max`
/// completions per prompt under one generation policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionCache {
    pub policy: GenerationPolicy,
    pub k_max: usize,
    pub prompts: Vec<PromptCompletions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mean_self_bleu: f64,
    pub prompts_scored: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfBleuCurve {
    pub points: Vec<CurvePoint>,
    pub k_max: usize,
    pub policy: GenerationPolicy,
    /// Prompts whose completion set contained an empty completion; these are
    /// skipped for every k so all points average over the same prompts.
    pub skipped_prompts: Vec<String>,
}

/// Generates `k_max` completions per prompt once, caching them for reuse.
/// The per-prompt seed schedule comes from [`generate_k`], so the first k
/// completions for any prompt are identical across different k.
pub fn generate_completion_cache<G: Generator + ?Sized>(
    model: &G,
    prompts: &[StoryPrompt],
    policy: &GenerationPolicy,
    k_max: usize,
) -> Result<CompletionCache, DiversityError> {
    if prompts.is_empty() {
        return Err(DiversityError::EmptyInput("no prompts".into()));
    }
    if k_max < 2 {
        return Err(DiversityError::InvalidConfig(
            "k_max must be at least 2".into(),
        ));
    }
    let mut per_call = policy.clone();
    per_call.k = k_max as u32;
    let mut cached = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let generations = generate_k(model, &prompt.story_id, &prompt.prompt_text, &per_call)?;
        cached.push(PromptCompletions {
            story_id: prompt.story_id.clone(),
            completions: generations.into_iter().map(|g| g.completion_text).collect(),
        });
    }
    Ok(CompletionCache {
        policy: per_call,
        k_max,
        prompts: cached,
    })
}

/// Self-BLEU of the first k completions of each prompt, averaged over
/// prompts, for each requested k. Every point reuses the same cache: the
/// first k completions are byte-identical to what a fresh k-completion run
/// would produce, so growing k only appends members to each set.
pub fn self_bleu_curve(
    cache: &CompletionCache,
    k_values: &[usize],
    config: &BleuConfig,
) -> Result<SelfBleuCurve, DiversityError> {
    config.validate()?;
    if cache.prompts.is_empty() {
        return Err(DiversityError::EmptyInput("empty completion cache".into()));
    }
    let k_max = cache
        .prompts
        .iter()
        .map(|p| p.completions.len())
        .min()
        .unwrap_or(0)
        .min(cache.k_max);
    let mut ks: Vec<usize> = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(DiversityError::EmptyInput("no k values".into()));
    }
    for &k in &ks {
        if k < 2 || k > k_max {
            return Err(DiversityError::KOutOfRange { k, k_max });
        }
    }

    let mut skipped_prompts = Vec::new();
    let mut sets: Vec<SelfBleuSet> = Vec::new();
    for pc in &cache.prompts {
        if pc.completions.iter().any(|c| tokenize(c).next().is_none()) {
            skipped_prompts.push(pc.story_id.clone());
            continue;
        }
        sets.push(SelfBleuSet::new(&pc.completions, config.max_n));
    }
    if sets.is_empty() {
        return Err(DiversityError::EmptyInput(
            "every prompt had an empty completion".into(),
        ));
    }

    let mut points = Vec::with_capacity(ks.len());
    for &k in &ks {
        let mean = sets.iter_mut().map(|s| s.score_first_k(k)).sum::<f64>() / sets.len() as f64;
        points.push(CurvePoint {
            k,
            mean_self_bleu: config.rescale(mean),
            prompts_scored: sets.len(),
        });
    }
    Ok(SelfBleuCurve {
        points,
        k_max,
        policy: cache.policy.clone(),
        skipped_prompts,
    })
}

/// Incremental leave-one-out BLEU over growing prefixes of one completion
/// set.
///
/// For member i against references {first k} \ {i}, clipping needs
/// max_{j != i, j < k} count_j(gram). Tracking the top two counts per gram
/// (with the index holding the best) answers that in O(1):
/// max-excluding-i = second-best if i holds the best, else the best. Growing
/// the prefix from k to k+1 only folds in member k's counts, so scoring all
/// k in ascending order costs O(total grams) amortized instead of
/// O(k^2 * grams).
struct SelfBleuSet {
    max_n: usize,
    members: Vec<Vec<u32>>,
    // Per n (1-indexed by position), per member: its own n-gram counts.
    member_grams: Vec<Vec<HashMap<Vec<u32>, u64>>>,
    // Per n: gram -> (best count, member holding it, second-best count),
    // over members folded in so far.
    top2: Vec<HashMap<Vec<u32>, (u64, usize, u64)>>,
    folded: usize,
}

impl SelfBleuSet {
    fn new(completions: &[String], max_n: usize) -> SelfBleuSet {
        let mut interner = Interner::default();
        let members: Vec<Vec<u32>> = completions.iter().map(|c| interner.encode(c)).collect();
        let member_grams = members
            .iter()
            .map(|tokens| {
                (1..=max_n)
                    .map(|n| {
                        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
                        if tokens.len() >= n {
                            for gram in tokens.windows(n) {
                                *counts.entry(gram.to_vec()).or_insert(0) += 1;
                            }
                        }
                        counts
                    })
                    .collect()
            })
            .collect();
        SelfBleuSet {
            max_n,
            members,
            member_grams,
            top2: vec![HashMap::new(); max_n],
            folded: 0,
        }
    }

    fn fold_member(&mut self, i: usize) {
        for (ni, grams) in self.member_grams[i].iter().enumerate() {
            for (gram, &count) in grams {
                match self.top2[ni].get_mut(gram) {
                    None => {
                        self.top2[ni].insert(gram.clone(), (count, i, 0));
                    }
                    Some(entry) => {
                        if count > entry.0 {
                            *entry = (count, i, entry.0);
                        } else if count > entry.2 {
                            entry.2 = count;
                        }
                    }
                }
            }
        }
        self.folded = i + 1;
    }

    /// Mean leave-one-out BLEU over the first k members, unit scale.
    /// Callers must visit k in ascending order.
    fn score_first_k(&mut self, k: usize) -> f64 {
        assert!(k >= 2 && k <= self.members.len());
        while self.folded < k {
            self.fold_member(self.folded);
        }
        let mut sum = 0.0f64;
        for i in 0..k {
            sum += self.loo_bleu(i);
        }
        sum / k as f64
    }

    fn loo_bleu(&self, i: usize) -> f64 {
        let cand_len = self.members[i].len();
        let mut log_sum = 0.0f64;
        for ni in 0..self.max_n {
            let grams = &self.member_grams[i][ni];
            let total: u64 = grams.values().sum();
            if total == 0 {
                return 0.0;
            }
            let mut clipped = 0u64;
            for (gram, &count) in grams {
                let best = match self.top2[ni].get(gram) {
                    None => 0,
                    Some(&(best, holder, second)) => {
                        if holder == i {
                            second
                        } else {
                            best
                        }
                    }
                };
                clipped += count.min(best);
            }
            if clipped == 0 {
                return 0.0;
            }
            log_sum += (clipped as f64 / total as f64).ln();
        }
        let precision = (log_sum / self.max_n as f64).exp();
        precision * self.loo_brevity(i, cand_len)
    }

    fn loo_brevity(&self, i: usize, cand_len: usize) -> f64 {
        let r = self
            .members
            .iter()
            .take(self.folded)
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, m)| m.len())
            .min_by_key(|&len| {
                let diff = (len as i64 - cand_len as i64).unsigned_abs();
                (diff, len)
            })
            .expect("k >= 2 guarantees a reference");
        if cand_len >= r {
            1.0
        } else {
            (1.0 - r as f64 / cand_len as f64).exp()
        }
    }
}
