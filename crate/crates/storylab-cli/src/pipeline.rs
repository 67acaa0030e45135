//! The end-to-end pipeline: normalize raw dumps, sample to the word mix,
//! train the n-gram model, truncate stories into prompts, generate
//! completions, measure self-BLEU, combine corpora under the budget, and
//! optionally evaluate minimal pairs.
//!
//! Every artifact lands in the configured workdir. A successful run finishes
//! by writing `run.manifest.json` with a SHA-256 digest of every artifact;
//! reruns with the same config and inputs produce byte-identical artifacts,
//! so the manifest doubles as a reproducibility check. A failed run leaves no
//! run manifest behind.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use storylab_core::corpus::{normalize_document, write_corpus, write_corpus_with};
use storylab_core::fixture::DOC_SEPARATOR;
use storylab_core::lm::EOT;
use storylab_core::{
    build_prompt_set, combine, generate_completion_cache, load_pairs, sample_budget, score_pairs,
    self_bleu_curve, train_ngram, BleuConfig, CompletionCache, Corpus, CorpusError, Document,
    GenerationPolicy, NGramConfig, Provenance, Source, Suite, Track,
};

use crate::config::{ConfigError, PipelineConfig, Seeds};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn at_stage<E>(stage: &'static str) -> impl FnOnce(E) -> PipelineError
where
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    move |source| PipelineError::Stage {
        stage,
        source: source.into(),
    }
}

/// What a completed run wrote, keyed for the reproducibility manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// SHA-256 of the verbatim config file bytes.
    pub config_digest: String,
    pub track: Track,
    pub budget_words: u64,
    pub seeds: Seeds,
    /// Word totals per pipeline product.
    pub words: BTreeMap<String, u64>,
    /// Item counts (prompts, completions, skips) per pipeline product.
    pub counts: BTreeMap<String, u64>,
    /// Workdir-relative artifact path to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct RunReport {
    pub workdir: PathBuf,
    pub manifest: RunManifest,
}

pub const RUN_MANIFEST_FILE: &str = "run.manifest.json";

/// Reads, validates, and runs a config file. Relative paths inside the
/// config resolve against the config file's directory.
pub fn run_from_file(config_path: &Path) -> Result<RunReport, PipelineError> {
    let raw = std::fs::read(config_path).map_err(|source| ConfigError::Unreadable {
        path: config_path.to_path_buf(),
        source,
    })?;
    let mut config = PipelineConfig::from_file(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    resolve_paths(&mut config, base);
    run_pipeline(&config, &raw)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_paths(config: &mut PipelineConfig, base: &Path) {
    config.paths.tiny_raw = resolve(base, &config.paths.tiny_raw);
    config.paths.baby_raw = resolve(base, &config.paths.baby_raw);
    config.paths.workdir = resolve(base, &config.paths.workdir);
    if let Some(eval) = &mut config.eval {
        eval.pairs_path = resolve(base, &eval.pairs_path);
    }
}

/// Runs every stage into `config.paths.workdir`. `config_bytes` is the
/// verbatim config file (digested into the run manifest).
pub fn run_pipeline(
    config: &PipelineConfig,
    config_bytes: &[u8],
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let budget_spec = config.budget();
    let workdir = &config.paths.workdir;
    std::fs::create_dir_all(workdir).map_err(at_stage("setup"))?;

    let mut words: BTreeMap<String, u64> = BTreeMap::new();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut artifact_paths: Vec<String> = Vec::new();
    fn track_corpus(paths: &mut Vec<String>, name: &str) {
        paths.push(name.to_string());
        paths.push(format!("{name}.manifest.json"));
    }

    // normalize: raw dumps to normalized story corpora.
    let (tiny_all, tiny_empty) =
        normalize_raw_file(&config.paths.tiny_raw, Source::TinyStories, "tiny-")
            .map_err(at_stage("normalize"))?;
    let (baby_all, baby_empty) = normalize_raw_file(&config.paths.baby_raw, Source::BabyLm, "baby-")
        .map_err(at_stage("normalize"))?;
    write_corpus(&tiny_all, &workdir.join("tiny.normalized.jsonl")).map_err(at_stage("normalize"))?;
    write_corpus(&baby_all, &workdir.join("baby.normalized.jsonl")).map_err(at_stage("normalize"))?;
    track_corpus(&mut artifact_paths, "tiny.normalized.jsonl");
    track_corpus(&mut artifact_paths, "baby.normalized.jsonl");
    words.insert("tiny_normalized".into(), tiny_all.total_words());
    words.insert("baby_normalized".into(), baby_all.total_words());
    counts.insert("tiny_stories".into(), tiny_all.len() as u64);
    counts.insert("baby_stories".into(), baby_all.len() as u64);
    counts.insert("tiny_empty_skipped".into(), tiny_empty);
    counts.insert("baby_empty_skipped".into(), baby_empty);

    // sample: seeded word-budget subsets forming the training mix.
    let d_tiny = sample_budget(&tiny_all, config.mix.tiny_words, config.seeds.sample);
    let d_baby = sample_budget(&baby_all, config.mix.baby_words, config.seeds.sample);
    let tiny_manifest = d_tiny.manifest_with(Some(config.mix.tiny_words), Some(config.seeds.sample));
    write_corpus_with(&d_tiny, &workdir.join("d_tiny.jsonl"), &tiny_manifest)
        .map_err(at_stage("sample"))?;
    let baby_manifest = d_baby.manifest_with(Some(config.mix.baby_words), Some(config.seeds.sample));
    write_corpus_with(&d_baby, &workdir.join("d_baby.jsonl"), &baby_manifest)
        .map_err(at_stage("sample"))?;
    track_corpus(&mut artifact_paths, "d_tiny.jsonl");
    track_corpus(&mut artifact_paths, "d_baby.jsonl");
    words.insert("tiny_sampled".into(), d_tiny.total_words());
    words.insert("baby_sampled".into(), d_baby.total_words());

    // train: the generator model, fit on the tiny-story slice.
    let model = train_ngram(
        &d_tiny,
        &NGramConfig {
            order: config.model.order,
            vocab_cap: config.model.vocab_cap,
            discount: config.model.discount,
        },
    )
    .map_err(at_stage("train"))?;
    model
        .save(&workdir.join("model.ngram.json"))
        .map_err(at_stage("train"))?;
    artifact_paths.push("model.ngram.json".into());
    counts.insert("vocab_size".into(), model.vocab_size() as u64);
    counts.insert("trained_tokens".into(), model.trained_tokens());

    // prompts: truncate sampled stories into generation prompts.
    let mut prompt_set = build_prompt_set(
        &d_tiny,
        config.prompts.ratio_low,
        config.prompts.ratio_high,
        config.seeds.prompts,
    )
    .map_err(at_stage("prompts"))?;
    if config.prompts.max_prompts > 0 && prompt_set.prompts.len() > config.prompts.max_prompts {
        prompt_set.prompts.truncate(config.prompts.max_prompts);
    }
    if prompt_set.prompts.is_empty() {
        return Err(at_stage("prompts")(
            "no story long enough to truncate".to_string(),
        ));
    }
    write_jsonl(&workdir.join("prompts.jsonl"), &prompt_set.prompts).map_err(at_stage("prompts"))?;
    artifact_paths.push("prompts.jsonl".into());
    counts.insert("prompts".into(), prompt_set.prompts.len() as u64);
    counts.insert("prompts_skipped_short".into(), prompt_set.skipped);

    // generate: k completions per prompt, cached once for every later use.
    let policy = GenerationPolicy {
        top_p: config.generation.top_p,
        temperature: config.generation.temperature,
        max_new_tokens: config.generation.max_new_tokens,
        seed: config.seeds.generate,
        stop_token: EOT.to_string(),
        ..GenerationPolicy::default()
    };
    let cache = generate_completion_cache(
        &model,
        &prompt_set.prompts,
        &policy,
        config.generation.completions_per_prompt,
    )
    .map_err(at_stage("generate"))?;
    write_json(&workdir.join("gen_cache.json"), &cache).map_err(at_stage("generate"))?;
    artifact_paths.push("gen_cache.json".into());

    let (d_gen, empty_completions) = generated_corpus(&cache).map_err(at_stage("generate"))?;
    write_corpus(&d_gen, &workdir.join("d_gen.jsonl")).map_err(at_stage("generate"))?;
    track_corpus(&mut artifact_paths, "d_gen.jsonl");
    words.insert("generated".into(), d_gen.total_words());
    counts.insert("completions".into(), d_gen.len() as u64);
    counts.insert("empty_completions".into(), empty_completions);

    // selfbleu: the diversity curve over the cached completions.
    let curve = self_bleu_curve(
        &cache,
        &config.selfbleu.k_values,
        &BleuConfig {
            max_n: config.selfbleu.max_n,
            ..BleuConfig::default()
        },
    )
    .map_err(at_stage("selfbleu"))?;
    write_json(&workdir.join("selfbleu.json"), &curve).map_err(at_stage("selfbleu"))?;
    artifact_paths.push("selfbleu.json".into());
    counts.insert("selfbleu_points".into(), curve.points.len() as u64);

    // combine: the budgeted training corpus.
    let (d_comb, comb_manifest) = combine(
        &[
            (&d_tiny, Provenance::Sampled),
            (&d_baby, Provenance::Sampled),
            (&d_gen, Provenance::Generated),
        ],
        &budget_spec,
    )
    .map_err(at_stage("combine"))?;
    write_corpus_with(&d_comb, &workdir.join("d_comb.jsonl"), &comb_manifest)
        .map_err(at_stage("combine"))?;
    track_corpus(&mut artifact_paths, "d_comb.jsonl");
    words.insert("combined".into(), d_comb.total_words());
    words.insert("combined_nongenerated".into(), d_comb.nongenerated_words());

    // eval: optional minimal-pair accuracy of the trained model.
    if let Some(eval) = &config.eval {
        let pairs = load_pairs(&eval.pairs_path, Suite::Custom).map_err(at_stage("eval"))?;
        let report = score_pairs(&pairs, &model).map_err(at_stage("eval"))?;
        write_json(&workdir.join("eval_report.json"), &report).map_err(at_stage("eval"))?;
        artifact_paths.push("eval_report.json".into());
        counts.insert("eval_pairs".into(), report.total_pairs);
        counts.insert("eval_ties".into(), report.tie_count);
    }

    // manifest: digest everything written above.
    let mut artifacts = BTreeMap::new();
    for rel in &artifact_paths {
        let digest = sha256_file(&workdir.join(rel)).map_err(at_stage("manifest"))?;
        artifacts.insert(rel.clone(), digest);
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: sha256_hex(config_bytes),
        track: budget_spec.track,
        budget_words: budget_spec.budget_words,
        seeds: config.seeds,
        words,
        counts,
        artifacts,
    };
    write_json(&workdir.join(RUN_MANIFEST_FILE), &manifest).map_err(at_stage("manifest"))?;

    Ok(RunReport {
        workdir: workdir.clone(),
        manifest,
    })
}

/// Splits a raw dump on separator lines and normalizes each story.
/// Returns the corpus and how many chunks normalized to nothing.
pub fn normalize_raw_file(
    path: &Path,
    source: Source,
    id_prefix: &str,
) -> Result<(Corpus, u64), CorpusError> {
    let raw = std::fs::read_to_string(path)?;
    let mut docs = Vec::new();
    let mut skipped = 0u64;
    let mut chunk = String::new();
    let mut index = 0u64;
    // Whitespace-only chunks (stray separators, trailing blank lines) are not
    // stories; only nonblank chunks that normalize to nothing count as skipped.
    let flush = |chunk: &mut String, index: &mut u64| -> Result<Option<Document>, CorpusError> {
        if chunk.trim().is_empty() {
            chunk.clear();
            return Ok(None);
        }
        let id = format!("{id_prefix}{index:07}");
        *index += 1;
        let result = normalize_document(chunk, source.clone(), id);
        chunk.clear();
        match result {
            Ok(doc) => Ok(Some(doc)),
            Err(CorpusError::EmptyAfterNormalization) => Ok(None),
            Err(err) => Err(err),
        }
    };
    for line in raw.lines() {
        if line.trim() == DOC_SEPARATOR {
            let blank = chunk.trim().is_empty();
            match flush(&mut chunk, &mut index)? {
                Some(doc) => docs.push(doc),
                None if blank => {}
                None => skipped += 1,
            }
        } else {
            chunk.push_str(line);
            chunk.push('\n');
        }
    }
    let blank = chunk.trim().is_empty();
    match flush(&mut chunk, &mut index)? {
        Some(doc) => docs.push(doc),
        None if blank => {}
        None => skipped += 1,
    }
    let corpus = Corpus::from_documents(docs)?;
    Ok((corpus, skipped))
}

/// Turns cached completions into generated documents. Completions are
/// sequences of model vocabulary tokens joined by spaces, so they are
/// already in normalized form. Empty completions are dropped and counted.
pub fn generated_corpus(cache: &CompletionCache) -> Result<(Corpus, u64), CorpusError> {
    let mut docs = Vec::new();
    let mut empty = 0u64;
    for prompt in &cache.prompts {
        for (i, completion) in prompt.completions.iter().enumerate() {
            if completion.split_whitespace().next().is_none() {
                empty += 1;
                continue;
            }
            docs.push(Document::new(
                format!("{}~g{i}", prompt.story_id),
                Source::Generated,
                Provenance::Generated,
                completion.clone(),
            )?);
        }
    }
    let corpus = Corpus::from_documents(docs)?;
    Ok((corpus, empty))
}

/// One JSON value per line, in input order.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Pretty-printed JSON; map fields are sorted, so bytes are reproducible.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
