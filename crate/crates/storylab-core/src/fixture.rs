//! Seeded synthetic story corpora for tests, benchmarks, and demo runs.
//!
//! Everything here is a pure function of the seed: the same seed yields the
//! same bytes on every run and platform, which end-to-end reproducibility
//! checks rely on. Stories are template-filled simple prose over a small
//! closed vocabulary, so n-gram models trained on them have dense counts,
//! and the raw form deliberately carries typographic quotes, CRLF line
//! breaks, and multi-paragraph layout to exercise normalization.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::corpus::{normalize_document, normalize_text, tokenize, Corpus, Source, PAR};
use crate::pairs::{MinimalPair, Suite};

/// Line that separates documents in raw fixture files.
pub const DOC_SEPARATOR: &str = "<|endoftext|>";

const NAMES: &[&str] = &[
    "Mila", "Tom", "Ben", "Lily", "Sara", "Finn", "Ana", "Leo", "Maya", "Noor", "Ivy", "Omar",
    "Pia", "Rex", "Tess", "Yara", "Zack", "June", "Kai", "Nora",
];
const ANIMALS: &[&str] = &[
    "fox", "rabbit", "bear", "owl", "duck", "mouse", "cat", "dog", "frog", "horse", "hen",
    "wolf", "deer", "crow", "goat", "seal",
];
const ADJECTIVES: &[&str] = &[
    "little", "brave", "sleepy", "curious", "happy", "quiet", "clever", "gentle", "hungry",
    "tiny", "bright", "muddy", "swift", "shy", "bold", "warm",
];
const VERBS: &[&str] = &[
    "walked", "jumped", "ran", "looked", "climbed", "sailed", "danced", "hopped", "wandered",
    "hurried", "tumbled", "marched", "drifted", "crept", "raced", "skipped",
];
const PLACES: &[&str] = &[
    "forest", "river", "meadow", "garden", "village", "mountain", "harbor", "orchard",
    "valley", "market", "bridge", "island", "field", "cave", "mill", "shore",
];
const OBJECTS: &[&str] = &[
    "lantern", "basket", "kite", "drum", "boat", "map", "acorn", "ribbon", "ladder", "bell",
    "cloak", "spoon", "wheel", "book", "net", "crown",
];

/// Deterministic story source. Each story is a handful of paragraphs of
/// template sentences; the raw text uses typographic punctuation and mixed
/// line breaks on purpose.
pub struct StorySynth {
    rng: ChaCha12Rng,
}

impl StorySynth {
    pub fn new(seed: u64) -> StorySynth {
        StorySynth {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    fn sentence(&mut self) -> String {
        let rng = &mut self.rng;
        let name = *NAMES.choose(rng).unwrap();
        let animal = *ANIMALS.choose(rng).unwrap();
        let adj = *ADJECTIVES.choose(rng).unwrap();
        let verb = *VERBS.choose(rng).unwrap();
        let place = *PLACES.choose(rng).unwrap();
        let object = *OBJECTS.choose(rng).unwrap();
        match self.rng.random_range(0..8u32) {
            0 => format!("{name} the {adj} {animal} {verb} to the {place}."),
            1 => format!("One day, {name} found a {adj} {object} near the {place}."),
            2 => {
                let verb2 = *VERBS.choose(&mut self.rng).unwrap();
                format!("The {animal} {verb} over the {object} and {verb2} into the {place}.")
            }
            3 => format!("{name} said, \u{201C}look at the {adj} {animal}!\u{201D}"),
            4 => format!("It was a {adj} morning in the {place}."),
            5 => {
                let name2 = *NAMES.choose(&mut self.rng).unwrap();
                format!("{name} and {name2} {verb} together until the sun set.")
            }
            6 => format!("{name} didn\u{2019}t stop at the {place}."),
            _ => format!("A {adj} {animal} carried the {object} across the {place}."),
        }
    }

    /// Raw (unnormalized) story text: paragraphs separated by blank lines,
    /// sentences sometimes hard-wrapped, occasionally CRLF.
    pub fn raw_story(&mut self) -> String {
        let n_sentences = self.rng.random_range(3..=10usize);
        let sentences: Vec<String> = (0..n_sentences).map(|_| self.sentence()).collect();
        let mut paragraphs: Vec<String> = Vec::new();
        let mut current: Vec<String> = Vec::new();
        for sentence in sentences {
            current.push(sentence);
            if current.len() >= 3 && self.rng.random_bool(0.4) {
                paragraphs.push(self.join_paragraph(&current));
                current.clear();
            }
        }
        if !current.is_empty() {
            paragraphs.push(self.join_paragraph(&current));
        }
        let mut story = paragraphs.join("\n\n");
        if self.rng.random_bool(0.05) {
            story = story.replace('\n', "\r\n");
        }
        story
    }

    fn join_paragraph(&mut self, sentences: &[String]) -> String {
        // Some paragraphs hard-wrap each sentence onto its own line.
        if self.rng.random_bool(0.2) {
            sentences.join("\n")
        } else {
            sentences.join(" ")
        }
    }
}

/// Normalized documents totalling at least `target_words` (overshoot is at
/// most one story).
pub fn synth_corpus_words(
    seed: u64,
    source: Source,
    id_prefix: &str,
    target_words: u64,
) -> Corpus {
    let mut synth = StorySynth::new(seed);
    let mut corpus = Corpus::new();
    let mut i = 0u64;
    while corpus.total_words() < target_words {
        let doc = normalize_document(&synth.raw_story(), source.clone(), format!("{id_prefix}{i:07}"))
            .expect("synthesized stories always carry words");
        corpus.push(doc).expect("ids are sequential and unique");
        i += 1;
    }
    corpus
}

/// Exactly `n_stories` normalized documents.
pub fn synth_corpus_stories(seed: u64, source: Source, id_prefix: &str, n_stories: u64) -> Corpus {
    let mut synth = StorySynth::new(seed);
    let mut corpus = Corpus::new();
    for i in 0..n_stories {
        let doc = normalize_document(&synth.raw_story(), source.clone(), format!("{id_prefix}{i:07}"))
            .expect("synthesized stories always carry words");
        corpus.push(doc).expect("ids are sequential and unique");
    }
    corpus
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureStats {
    pub documents: u64,
    /// Word count after normalization, [PAR] excluded; what a downstream
    /// recount of the normalized corpus reports.
    pub words: u64,
}

/// Writes a raw multi-document fixture file: stories in raw form, separated
/// by [`DOC_SEPARATOR`] lines. Returns counts measured the way the pipeline
/// will recount them.
pub fn write_raw_fixture(path: &Path, seed: u64, target_words: u64) -> std::io::Result<FixtureStats> {
    let mut synth = StorySynth::new(seed);
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let mut stats = FixtureStats {
        documents: 0,
        words: 0,
    };
    while stats.words < target_words {
        let story = synth.raw_story();
        if stats.documents > 0 {
            writeln!(out, "{DOC_SEPARATOR}")?;
        }
        writeln!(out, "{story}")?;
        let normalized = normalize_text(&story);
        stats.words += tokenize(&normalized).filter(|t| *t != PAR).count() as u64;
        stats.documents += 1;
    }
    out.flush()?;
    Ok(stats)
}

/// Deterministic minimal-pair suite: the good sentence is normalized
/// synthetic prose, the bad one has two words transposed. Groups cycle by
/// where the damage lands.
pub fn synth_pairs(seed: u64, n: usize) -> Vec<MinimalPair> {
    let mut synth = StorySynth::new(seed);
    let mut pairs = Vec::with_capacity(n);
    let mut i = 0usize;
    while pairs.len() < n {
        let sentence = normalize_text(&synth.sentence());
        let words: Vec<&str> = sentence.split(' ').collect();
        i += 1;
        if words.len() < 4 {
            continue;
        }
        let slot = i % 3;
        let swap_at = match slot {
            0 => 0,
            1 => words.len() / 2 - 1,
            _ => words.len() - 2,
        };
        let mut damaged = words.clone();
        damaged.swap(swap_at, swap_at + 1);
        if damaged == words {
            continue;
        }
        let group = match slot {
            0 => "transpose-initial",
            1 => "transpose-medial",
            _ => "transpose-final",
        };
        let pair = MinimalPair::new(
            format!("pair-{:04}", pairs.len()),
            sentence.clone(),
            damaged.join(" "),
            group,
            Suite::Custom,
        )
        .expect("swapped differing words always give a distinct sentence");
        pairs.push(pair);
    }
    pairs
}
