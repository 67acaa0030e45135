//! Word n-gram language model with interpolated absolute discounting.
//!
//! Each context level contributes its discounted evidence and hands the mass
//! it withheld to the level below:
//!
//! ```text
//! P_l(w | ctx) = max(c(ctx,w) - D, 0) / c(ctx)  +  lambda(ctx) * P_{l-1}(w | ctx')
//! lambda(ctx)  = D * distinct_followers(ctx) / c(ctx)
//! ```
//!
//! with the unigram base smoothed over the whole vocabulary:
//!
//! ```text
//! P_0(w) = max(c(w) - D, 0) / C  +  (D * T1 / C) * (1 / V)
//! ```
//!
//! Every conditional distribution therefore sums to exactly 1 and every
//! probability is strictly positive, which downstream scoring and the
//! sampling oracles rely on. Contexts are never padded: the first tokens of a
//! document are scored with whatever shorter context exists, matching how
//! counts were collected.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{self, NextDist, PowCache};
use super::{DecodeMode, Generation, GenerationPolicy, Generator, LmError, Scorer, Termination};
use crate::corpus::{tokenize, Corpus};

pub const UNK: &str = "<unk>";
pub const EOT: &str = "<eot>";

const MODEL_FORMAT: &str = "storylab-ngram-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    pub vocab_cap: usize,
    pub discount: f64,
}

impl Default for NGramConfig {
    fn default() -> NGramConfig {
        NGramConfig {
            order: 4,
            vocab_cap: 8192,
            discount: 0.75,
        }
    }
}

impl NGramConfig {
    fn validate(&self) -> Result<(), LmError> {
        if self.order == 0 {
            return Err(LmError::InvalidConfig("order must be at least 1".into()));
        }
        if self.vocab_cap < 2 {
            return Err(LmError::InvalidConfig("vocab_cap must be at least 2".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(LmError::InvalidConfig(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn new(content_tokens: Vec<String>) -> Vocab {
        let mut tokens = Vec::with_capacity(content_tokens.len() + 2);
        tokens.push(UNK.to_string());
        tokens.push(EOT.to_string());
        tokens.extend(content_tokens);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    fn eot(&self) -> u32 {
        1
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }

    fn encode(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }
}

#[derive(Debug, Clone, Default)]
struct CtxStats {
    total: u64,
    followers: HashMap<u32, u64>,
}

impl CtxStats {
    fn add(&mut self, token: u32) {
        self.total += 1;
        *self.followers.entry(token).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    // discounts[0] applies to the unigram base, discounts[l] to contexts of
    // length l.
    discounts: Vec<f64>,
    vocab: Vocab,
    levels: Vec<HashMap<Box<[u32]>, CtxStats>>,
    uni_counts: Vec<u64>,
    uni_total: u64,
    uni_distinct: u64,
    trained_tokens: u64,
    // Derived caches, rebuilt by finalize().
    uni_probs: Vec<f64>,
    uni_by_rank: Vec<u32>,
    uni_prob_total: f64,
}

impl NGramModel {
    /// Vocabulary size including the reserved `<unk>` and `<eot>`.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn trained_tokens(&self) -> u64 {
        self.trained_tokens
    }

    pub fn eot_id(&self) -> u32 {
        self.vocab.eot()
    }

    pub fn token(&self, id: u32) -> &str {
        self.vocab.token(id)
    }

    pub fn encode_token(&self, token: &str) -> u32 {
        self.vocab.encode(token)
    }

    pub fn lookup_token(&self, token: &str) -> Option<u32> {
        self.vocab.lookup(token)
    }

    /// A model with the given content vocabulary and no counts at all: every
    /// conditional collapses to the uniform distribution 1/V. Useful as a
    /// scoring baseline and as a closed-form oracle in tests.
    pub fn untrained(content_tokens: Vec<String>, order: usize, discount: f64) -> NGramModel {
        let vocab = Vocab::new(content_tokens);
        let n = vocab.len();
        let mut model = NGramModel {
            order: order.max(1),
            discounts: vec![discount; order.max(1)],
            vocab,
            levels: vec![HashMap::new(); order.max(1).saturating_sub(1)],
            uni_counts: vec![0; n],
            uni_total: 0,
            uni_distinct: 0,
            trained_tokens: 0,
            uni_probs: Vec::new(),
            uni_by_rank: Vec::new(),
            uni_prob_total: 0.0,
        };
        model.finalize();
        model
    }

    fn finalize(&mut self) {
        let v = self.vocab.len();
        self.uni_distinct = self.uni_counts.iter().filter(|&&c| c > 0).count() as u64;
        let d = self.discounts[0];
        let uniform = 1.0 / v as f64;
        self.uni_probs = if self.uni_total == 0 {
            vec![uniform; v]
        } else {
            let c_total = self.uni_total as f64;
            let reserve = d * self.uni_distinct as f64 / c_total;
            self.uni_counts
                .iter()
                .map(|&c| (c as f64 - d).max(0.0) / c_total + reserve * uniform)
                .collect()
        };
        let mut rank: Vec<u32> = (0..v as u32).collect();
        rank.sort_unstable_by(|&a, &b| {
            self.uni_probs[b as usize]
                .partial_cmp(&self.uni_probs[a as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
        self.uni_by_rank = rank;
        self.uni_prob_total = self.uni_probs.iter().sum();
    }

    pub(crate) fn uni_probs(&self) -> &[f64] {
        &self.uni_probs
    }

    pub(crate) fn uni_by_rank(&self) -> &[u32] {
        &self.uni_by_rank
    }

    pub(crate) fn uni_prob_total(&self) -> f64 {
        self.uni_prob_total
    }

    /// P(token | last min(order-1, len) ids of `context`).
    pub fn cond_prob(&self, context: &[u32], token: u32) -> f64 {
        let mut p = self.uni_probs[token as usize];
        let avail = context.len().min(self.order - 1);
        for l in 1..=avail {
            let ctx = &context[context.len() - l..];
            if let Some(stats) = self.levels[l - 1].get(ctx) {
                let d = self.discounts[l];
                let total = stats.total as f64;
                let c = stats.followers.get(&token).copied().unwrap_or(0) as f64;
                let discounted = (c - d).max(0.0) / total;
                let lambda = d * stats.followers.len() as f64 / total;
                p = discounted + lambda * p;
            }
        }
        p
    }

    /// The full next-token distribution after `context`, split into the
    /// sparse boosted set (tokens with high-order evidence) and the smoothed
    /// unigram tail. See [`sampling`].
    pub(crate) fn next_dist(&self, context: &[u32]) -> NextDist {
        let avail = context.len().min(self.order - 1);
        let mut weight = 1.0f64;
        let mut boost: HashMap<u32, f64> = HashMap::new();
        for l in (1..=avail).rev() {
            let ctx = &context[context.len() - l..];
            if let Some(stats) = self.levels[l - 1].get(ctx) {
                let d = self.discounts[l];
                let total = stats.total as f64;
                for (&w, &c) in &stats.followers {
                    *boost.entry(w).or_insert(0.0) += weight * (c as f64 - d).max(0.0) / total;
                }
                weight *= d * stats.followers.len() as f64 / total;
            }
        }
        let mut entries: Vec<(u32, f64)> = boost
            .into_iter()
            .map(|(w, b)| (w, b + weight * self.uni_probs[w as usize]))
            .collect();
        entries.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        NextDist {
            entries,
            beta: weight,
        }
    }

    fn encode_text(&self, text: &str) -> Vec<u32> {
        tokenize(text).map(|t| self.vocab.encode(t)).collect()
    }
}

/// Builds the vocabulary and count tables from `corpus`. Counts are collected
/// per document with `<eot>` appended, and contexts never cross document
/// boundaries. Tokens outside the `vocab_cap` most frequent (ties broken
/// lexicographically) map to `<unk>`.
pub fn train_ngram(corpus: &Corpus, config: &NGramConfig) -> Result<NGramModel, LmError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }

    let mut freq: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for tok in tokenize(doc.text()) {
            // The reserved strings never become content tokens.
            if tok != UNK && tok != EOT {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(config.vocab_cap);
    let vocab = Vocab::new(ranked.into_iter().map(|(t, _)| t.to_string()).collect());

    let mut model = NGramModel {
        order: config.order,
        discounts: vec![config.discount; config.order],
        levels: vec![HashMap::new(); config.order - 1],
        uni_counts: vec![0; vocab.len()],
        uni_total: 0,
        uni_distinct: 0,
        trained_tokens: 0,
        vocab,
        uni_probs: Vec::new(),
        uni_by_rank: Vec::new(),
        uni_prob_total: 0.0,
    };

    let mut seq: Vec<u32> = Vec::new();
    for doc in corpus {
        seq.clear();
        seq.extend(tokenize(doc.text()).map(|t| model.vocab.encode(t)));
        model.trained_tokens += seq.len() as u64;
        seq.push(model.vocab.eot());
        for i in 0..seq.len() {
            let w = seq[i];
            model.uni_counts[w as usize] += 1;
            model.uni_total += 1;
            for l in 1..model.order {
                if i < l {
                    break;
                }
                let ctx = &seq[i - l..i];
                match model.levels[l - 1].get_mut(ctx) {
                    Some(stats) => stats.add(w),
                    None => {
                        let mut stats = CtxStats::default();
                        stats.add(w);
                        model.levels[l - 1].insert(ctx.to_vec().into_boxed_slice(), stats);
                    }
                }
            }
        }
    }
    model.finalize();
    Ok(model)
}

impl Scorer for NGramModel {
    /// Sum of conditional natural-log probabilities over the token sequence,
    /// including the final `<eot>` transition. Finite for every input.
    fn log_prob(&self, text: &str) -> Result<f64, LmError> {
        let mut ids = self.encode_text(text);
        if ids.is_empty() {
            return Err(LmError::EmptyText);
        }
        ids.push(self.vocab.eot());
        let mut total = 0.0;
        for i in 0..ids.len() {
            total += self.cond_prob(&ids[..i], ids[i]).ln();
        }
        Ok(total)
    }

    fn scorer_id(&self) -> String {
        format!(
            "ngram(order={},vocab={},discount={})",
            self.order,
            self.vocab.len(),
            self.discounts[0]
        )
    }
}

impl Generator for NGramModel {
    /// Extends the prompt token by token. Greedy mode takes the argmax with
    /// ties broken toward the smallest token id; nucleus mode applies
    /// temperature, truncates to the smallest prefix of the sorted
    /// distribution reaching `top_p`, renormalizes, and samples with the
    /// policy's seed. Out-of-vocabulary prompt words condition as `<unk>`.
    fn generate(&self, prompt: &str, policy: &GenerationPolicy) -> Result<Generation, LmError> {
        policy.validate()?;
        let mut ids = self.encode_text(prompt);
        if ids.is_empty() {
            return Err(LmError::EmptyPrompt);
        }
        // A stop token outside the vocabulary can never be emitted; the
        // generation then runs to max_new_tokens.
        let stop = self.vocab.lookup(&policy.stop_token);
        let mut rng = ChaCha12Rng::seed_from_u64(policy.seed);
        let pow = PowCache::new(self, policy.temperature);
        let mut emitted: Vec<u32> = Vec::new();
        let mut terminated_by = Termination::MaxLen;
        for _ in 0..policy.max_new_tokens {
            let dist = self.next_dist(&ids);
            let token = match policy.mode {
                DecodeMode::Greedy => sampling::greedy_token(self, &dist),
                DecodeMode::Nucleus => {
                    sampling::nucleus_token(self, &dist, &pow, policy.top_p, &mut rng)
                }
            };
            if Some(token) == stop {
                terminated_by = Termination::StopToken;
                break;
            }
            ids.push(token);
            emitted.push(token);
        }
        let completion_text = emitted
            .iter()
            .map(|&id| self.vocab.token(id))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Generation {
            story_id: String::new(),
            completion_text,
            policy: policy.clone(),
            token_count: emitted.len() as u32,
            terminated_by,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CtxFile {
    c: Vec<u32>,
    f: Vec<(u32, u64)>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    order: usize,
    discounts: Vec<f64>,
    vocab: Vec<String>,
    uni_counts: Vec<u64>,
    trained_tokens: u64,
    levels: Vec<Vec<CtxFile>>,
}

impl NGramModel {
    /// Serializes the model as JSON with fully sorted tables, so identical
    /// models produce identical bytes.
    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        let levels = self
            .levels
            .iter()
            .map(|level| {
                let mut ctxs: Vec<CtxFile> = level
                    .iter()
                    .map(|(ctx, stats)| {
                        let mut f: Vec<(u32, u64)> =
                            stats.followers.iter().map(|(&w, &c)| (w, c)).collect();
                        f.sort_unstable_by_key(|&(w, _)| w);
                        CtxFile {
                            c: ctx.to_vec(),
                            f,
                        }
                    })
                    .collect();
                ctxs.sort_unstable_by(|a, b| a.c.cmp(&b.c));
                ctxs
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            order: self.order,
            discounts: self.discounts.clone(),
            vocab: self.vocab.tokens.clone(),
            uni_counts: self.uni_counts.clone(),
            trained_tokens: self.trained_tokens,
            levels,
        };
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(out, &file).map_err(std::io::Error::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NGramModel, LmError> {
        let reader = BufReader::new(File::open(path)?);
        let file: ModelFile = serde_json::from_reader(reader)
            .map_err(|e| LmError::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(LmError::ModelFormat(format!(
                "expected format {MODEL_FORMAT:?}, found {:?}",
                file.format
            )));
        }
        if file.order == 0
            || file.discounts.len() != file.order
            || file.levels.len() != file.order - 1
        {
            return Err(LmError::ModelFormat("inconsistent order fields".into()));
        }
        if file.vocab.len() < 2 || file.vocab[0] != UNK || file.vocab[1] != EOT {
            return Err(LmError::ModelFormat(
                "vocabulary must start with the reserved <unk> and <eot>".into(),
            ));
        }
        if file.uni_counts.len() != file.vocab.len() {
            return Err(LmError::ModelFormat("unigram table size mismatch".into()));
        }
        let v = file.vocab.len() as u32;
        let mut levels = Vec::with_capacity(file.levels.len());
        for (li, ctxs) in file.levels.into_iter().enumerate() {
            let mut level = HashMap::with_capacity(ctxs.len());
            for ctx in ctxs {
                if ctx.c.len() != li + 1 {
                    return Err(LmError::ModelFormat(format!(
                        "context of length {} in level {}",
                        ctx.c.len(),
                        li + 1
                    )));
                }
                if ctx.c.iter().chain(ctx.f.iter().map(|(w, _)| w)).any(|&id| id >= v) {
                    return Err(LmError::ModelFormat("token id out of range".into()));
                }
                let mut stats = CtxStats::default();
                for (w, c) in ctx.f {
                    stats.followers.insert(w, c);
                    stats.total += c;
                }
                if level.insert(ctx.c.into_boxed_slice(), stats).is_some() {
                    return Err(LmError::ModelFormat("duplicate context".into()));
                }
            }
            levels.push(level);
        }
        let index = file
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let mut model = NGramModel {
            order: file.order,
            discounts: file.discounts,
            vocab: Vocab {
                tokens: file.vocab,
                index,
            },
            levels,
            uni_total: file.uni_counts.iter().sum(),
            uni_counts: file.uni_counts,
            uni_distinct: 0,
            trained_tokens: file.trained_tokens,
            uni_probs: Vec::new(),
            uni_by_rank: Vec::new(),
            uni_prob_total: 0.0,
        };
        model.finalize();
        Ok(model)
    }
}
