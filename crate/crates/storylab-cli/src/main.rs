use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use storylab_core::corpus::read_corpus;
use storylab_core::fixture::write_raw_fixture;
use storylab_core::lm::EOT;
use storylab_core::{
    balanced_batches, build_prompt_set, combine, generate_completion_cache, judge_batch,
    load_pairs, sample_budget, score_pairs, self_bleu_curve, train_ngram, BatchSpec, BleuConfig,
    BudgetSpec, CompletionCache, EpochPolicy, GenerationPolicy, JudgeConfig, JudgeItem,
    NGramConfig, NGramModel, Provenance, Source, StoryPrompt, Suite,
};

use storylab_cli::pipeline::{
    normalize_raw_file, run_from_file, write_json, write_jsonl, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "storylab",
    version,
    about = "Story-corpus pipeline: normalize, sample, train, generate, measure, combine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackArg {
    StrictSmall,
    Strict,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Blimp,
    BlimpSupplement,
    Ewok,
    Custom,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Blimp => Suite::Blimp,
            SuiteArg::BlimpSupplement => Suite::BlimpSupplement,
            SuiteArg::Ewok => Suite::Ewok,
            SuiteArg::Custom => Suite::Custom,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline from a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Normalize a raw story dump (stories separated by <|endoftext|> lines).
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Source tag recorded on every document.
        #[arg(long, default_value = "tinystories")]
        source: String,
        #[arg(long, default_value = "doc-")]
        id_prefix: String,
    },
    /// Print document and word counts for a corpus file.
    Stats {
        corpus: PathBuf,
    },
    /// Sample a seeded subset of a corpus up to a word target.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        words: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the n-gram model and save it to disk.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 8192)]
        vocab_cap: usize,
        #[arg(long, default_value_t = 0.75)]
        discount: f64,
    },
    /// Truncate stories into generation prompts.
    Prompts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        ratio_low: f64,
        #[arg(long, default_value_t = 0.30)]
        ratio_high: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only the first N prompts (0 keeps all).
        #[arg(long, default_value_t = 0)]
        max_prompts: usize,
    },
    /// Generate k completions per prompt into a cache file.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        top_p: f64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 300)]
        max_new_tokens: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Self-BLEU diversity curve over a completion cache.
    Selfbleu {
        #[arg(long)]
        cache: PathBuf,
        /// Write the curve here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Completions-per-prompt values to score, e.g. 2,5,10.
        #[arg(long, value_delimiter = ',', default_value = "2,5")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
    },
    /// Combine corpora under a word budget (generated words are exempt).
    Combine {
        #[arg(long)]
        tiny: PathBuf,
        #[arg(long)]
        baby: PathBuf,
        #[arg(long)]
        gen: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "strict-small")]
        track: TrackArg,
        /// Budget in words; required for --track custom.
        #[arg(long)]
        budget_words: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Stream balanced batches of document ids from two corpora.
    Batches {
        #[arg(long)]
        group_a: PathBuf,
        #[arg(long)]
        group_b: PathBuf,
        #[arg(long, default_value_t = 80)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// How many batches to emit.
        #[arg(long, default_value_t = 10)]
        count: u64,
        /// Exact half/half batches instead of per-slot coin flips.
        #[arg(long)]
        strict_quota: bool,
        /// End the stream when either corpus runs out instead of reshuffling.
        #[arg(long)]
        stop_at_shorter: bool,
    },
    /// Score minimal pairs with a trained model.
    EvalPairs {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "custom")]
        suite: SuiteArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Grade completions with a remote LLM judge (reads STORYLAB_JUDGE_API_KEY).
    Judge {
        /// JSONL with {"story_beginning": ..., "completion": ...} per line.
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        endpoint: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        max_calls: Option<u64>,
        #[arg(long, default_value_t = 0)]
        min_interval_ms: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a deterministic synthetic raw story dump for local runs.
    GenFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        words: u64,
    },
}

/// Usage errors (bad config or arguments) exit 2; runtime failures exit 3.
enum CliError {
    Usage(Box<dyn std::error::Error + Send + Sync>),
    Runtime(Box<dyn std::error::Error + Send + Sync>),
}

fn usage<E: Into<Box<dyn std::error::Error + Send + Sync>>>(e: E) -> CliError {
    CliError::Usage(e.into())
}

fn runtime<E: Into<Box<dyn std::error::Error + Send + Sync>>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(err)) => {
            report("invalid input", err.as_ref());
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            report("failed", err.as_ref());
            ExitCode::from(3)
        }
    }
}

fn report(kind: &str, err: &dyn std::error::Error) {
    eprintln!("storylab: {kind}: {err}");
    let mut cause = err.source();
    while let Some(c) = cause {
        eprintln!("  caused by: {c}");
        cause = c.source();
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    println!("{text}");
    Ok(())
}

fn emit_json<T: serde::Serialize>(value: &T, output: Option<&PathBuf>) -> Result<(), CliError> {
    match output {
        Some(path) => write_json(path, value).map_err(runtime),
        None => print_json(value),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config } => {
            let report = run_from_file(&config).map_err(|err| match err {
                PipelineError::Config(e) => usage(e),
                stage => runtime(stage),
            })?;
            eprintln!("run complete: {}", report.workdir.display());
            print_json(&report.manifest)
        }
        Command::Normalize {
            input,
            output,
            source,
            id_prefix,
        } => {
            let (corpus, skipped) =
                normalize_raw_file(&input, Source::parse(&source), &id_prefix).map_err(runtime)?;
            storylab_core::corpus::write_corpus(&corpus, &output).map_err(runtime)?;
            eprintln!(
                "normalized {} stories ({} words, {} empty chunks skipped)",
                corpus.len(),
                corpus.total_words(),
                skipped
            );
            Ok(())
        }
        Command::Stats { corpus } => {
            let corpus = read_corpus(&corpus).map_err(runtime)?;
            let mut by_source: BTreeMap<String, u64> = BTreeMap::new();
            for doc in &corpus {
                *by_source.entry(doc.source().as_str().to_string()).or_default() +=
                    doc.word_count();
            }
            print_json(&serde_json::json!({
                "documents": corpus.len(),
                "words": corpus.total_words(),
                "nongenerated_words": corpus.nongenerated_words(),
                "words_by_source": by_source,
            }))
        }
        Command::Sample {
            input,
            output,
            words,
            seed,
        } => {
            let corpus = read_corpus(&input).map_err(runtime)?;
            let sampled = sample_budget(&corpus, words, seed);
            let manifest = sampled.manifest_with(Some(words), Some(seed));
            storylab_core::corpus::write_corpus_with(&sampled, &output, &manifest)
                .map_err(runtime)?;
            eprintln!(
                "sampled {} of {} documents ({} words)",
                sampled.len(),
                corpus.len(),
                sampled.total_words()
            );
            Ok(())
        }
        Command::TrainLm {
            corpus,
            output,
            order,
            vocab_cap,
            discount,
        } => {
            let corpus = read_corpus(&corpus).map_err(runtime)?;
            let model = train_ngram(
                &corpus,
                &NGramConfig {
                    order,
                    vocab_cap,
                    discount,
                },
            )
            .map_err(usage)?;
            model.save(&output).map_err(runtime)?;
            eprintln!(
                "trained order-{order} model: vocab {}, {} tokens",
                model.vocab_size(),
                model.trained_tokens()
            );
            Ok(())
        }
        Command::Prompts {
            corpus,
            output,
            ratio_low,
            ratio_high,
            seed,
            max_prompts,
        } => {
            let corpus = read_corpus(&corpus).map_err(runtime)?;
            let mut set =
                build_prompt_set(&corpus, ratio_low, ratio_high, seed).map_err(usage)?;
            if max_prompts > 0 && set.prompts.len() > max_prompts {
                set.prompts.truncate(max_prompts);
            }
            write_jsonl(&output, &set.prompts).map_err(runtime)?;
            eprintln!(
                "wrote {} prompts ({} stories too short)",
                set.prompts.len(),
                set.skipped
            );
            Ok(())
        }
        Command::Generate {
            model,
            prompts,
            output,
            top_p,
            temperature,
            k,
            max_new_tokens,
            seed,
        } => {
            let model = NGramModel::load(&model).map_err(runtime)?;
            let prompts = read_prompts(&prompts)?;
            let policy = GenerationPolicy {
                top_p,
                temperature,
                max_new_tokens,
                seed,
                stop_token: EOT.to_string(),
                ..GenerationPolicy::default()
            };
            let cache = generate_completion_cache(&model, &prompts, &policy, k).map_err(usage)?;
            write_json(&output, &cache).map_err(runtime)?;
            eprintln!("cached {k} completions for {} prompts", cache.prompts.len());
            Ok(())
        }
        Command::Selfbleu {
            cache,
            output,
            k,
            max_n,
        } => {
            let text = std::fs::read_to_string(&cache).map_err(runtime)?;
            let cache: CompletionCache = serde_json::from_str(&text).map_err(runtime)?;
            let curve = self_bleu_curve(
                &cache,
                &k,
                &BleuConfig {
                    max_n,
                    ..BleuConfig::default()
                },
            )
            .map_err(usage)?;
            emit_json(&curve, output.as_ref())
        }
        Command::Combine {
            tiny,
            baby,
            gen,
            track,
            budget_words,
            output,
        } => {
            let budget = match (track, budget_words) {
                (TrackArg::StrictSmall, _) => BudgetSpec::strict_small(),
                (TrackArg::Strict, _) => BudgetSpec::strict(),
                (TrackArg::Custom, Some(words)) => BudgetSpec::custom(words),
                (TrackArg::Custom, None) => {
                    return Err(usage("--track custom requires --budget-words".to_string()))
                }
            };
            let tiny = read_corpus(&tiny).map_err(runtime)?;
            let baby = read_corpus(&baby).map_err(runtime)?;
            let gen = match &gen {
                Some(path) => Some(read_corpus(path).map_err(runtime)?),
                None => None,
            };
            let mut parts = vec![
                (&tiny, Provenance::Sampled),
                (&baby, Provenance::Sampled),
            ];
            if let Some(gen) = &gen {
                parts.push((gen, Provenance::Generated));
            }
            let (combined, manifest) = combine(&parts, &budget).map_err(usage)?;
            storylab_core::corpus::write_corpus_with(&combined, &output, &manifest)
                .map_err(runtime)?;
            eprintln!(
                "combined {} documents: {} words total, {} nongenerated (budget {})",
                combined.len(),
                combined.total_words(),
                combined.nongenerated_words(),
                budget.budget_words
            );
            Ok(())
        }
        Command::Batches {
            group_a,
            group_b,
            batch_size,
            seed,
            count,
            strict_quota,
            stop_at_shorter,
        } => {
            let a = read_corpus(&group_a).map_err(runtime)?;
            let b = read_corpus(&group_b).map_err(runtime)?;
            let ids_a: Vec<String> = a.iter().map(|d| d.id().to_string()).collect();
            let ids_b: Vec<String> = b.iter().map(|d| d.id().to_string()).collect();
            let spec = BatchSpec {
                batch_size,
                seed,
                epoch_policy: if stop_at_shorter {
                    EpochPolicy::StopAtShorter
                } else {
                    EpochPolicy::CycleReshuffle
                },
                strict_quota,
            };
            let stream = balanced_batches(&ids_a, &ids_b, &spec).map_err(usage)?;
            for batch in stream.take(count as usize) {
                let line = serde_json::json!({
                    "index": batch.index,
                    "composition": batch.composition,
                });
                println!("{line}");
            }
            Ok(())
        }
        Command::EvalPairs {
            pairs,
            model,
            suite,
            output,
        } => {
            let pairs = load_pairs(&pairs, suite.into()).map_err(runtime)?;
            let model = NGramModel::load(&model).map_err(runtime)?;
            let report = score_pairs(&pairs, &model).map_err(runtime)?;
            emit_json(&report, output.as_ref())
        }
        Command::Judge {
            items,
            endpoint,
            model,
            max_calls,
            min_interval_ms,
            output,
        } => {
            let items = read_judge_items(&items)?;
            let mut config =
                JudgeConfig::from_env(endpoint.to_string_lossy().into_owned(), model);
            config.max_calls = max_calls;
            config.min_call_interval = Duration::from_millis(min_interval_ms);
            let outcome = judge_batch(config, &items).map_err(runtime)?;
            emit_json(&outcome, output.as_ref())
        }
        Command::GenFixture { out, seed, words } => {
            let stats = write_raw_fixture(&out, seed, words).map_err(runtime)?;
            eprintln!(
                "wrote {} stories, {} words to {}",
                stats.documents,
                stats.words,
                out.display()
            );
            Ok(())
        }
    }
}

fn read_prompts(path: &PathBuf) -> Result<Vec<StoryPrompt>, CliError> {
    let file = std::fs::File::open(path).map_err(runtime)?;
    let mut prompts = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let prompt: StoryPrompt = serde_json::from_str(&line)
            .map_err(|e| runtime(format!("bad prompt at line {}: {e}", idx + 1)))?;
        prompts.push(prompt);
    }
    Ok(prompts)
}

#[derive(Deserialize)]
struct RawJudgeItem {
    story_beginning: String,
    completion: String,
}

fn read_judge_items(path: &PathBuf) -> Result<Vec<JudgeItem>, CliError> {
    let file = std::fs::File::open(path).map_err(runtime)?;
    let mut items = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawJudgeItem = serde_json::from_str(&line)
            .map_err(|e| usage(format!("bad judge item at line {}: {e}", idx + 1)))?;
        let item = JudgeItem::new(raw.story_beginning, raw.completion)
            .map_err(|e| usage(format!("bad judge item at line {}: {e}", idx + 1)))?;
        items.push(item);
    }
    Ok(items)
}
