//! Corpus model: documents with provenance, word accounting, normalization,
//! and a line-delimited on-disk format with sidecar manifests.
//!
//! A word is a whitespace-delimited token with punctuation attached. The
//! paragraph marker `[PAR]` is a real token in document text but never counts
//! toward word totals; budgets measure linguistic input, not formatting.

mod normalize;
mod store;

pub use normalize::{count_words, normalize_document, normalize_text, tokenize, PAR};
pub use store::{manifest_path, read_corpus, read_manifest, write_corpus, write_corpus_with};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document text is empty after normalization")]
    EmptyAfterNormalization,
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate document id {id:?}")]
    DuplicateId { id: String },
    #[error("invalid document {id:?}: {reason}")]
    InvalidDocument { id: String, reason: String },
    #[error("manifest does not match corpus: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a document's text originally came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    BabyLm,
    TinyStories,
    Generated,
    Other(String),
}

impl Source {
    pub fn as_str(&self) -> &str {
        match self {
            Source::BabyLm => "babylm",
            Source::TinyStories => "tinystories",
            Source::Generated => "generated",
            Source::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Source {
        match s {
            "babylm" => Source::BabyLm,
            "tinystories" => Source::TinyStories,
            "generated" => Source::Generated,
            other => Source::Other(other.to_string()),
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Source::parse(&s))
    }
}

/// How a document entered the corpus at hand: carried over unchanged, drawn
/// by the budget sampler, or produced by a generator. Only non-`Generated`
/// words count against a training budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Sampled,
    Generated,
}

/// A single normalized text with identity and provenance.
///
/// The text is always a single line: paragraph breaks appear as the `[PAR]`
/// token, never as raw newlines. `word_count` is kept in sync with the text
/// by construction; there is no mutable access to the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    id: String,
    source: Source,
    provenance: Provenance,
    text: String,
    word_count: u64,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        source: Source,
        provenance: Provenance,
        text: impl Into<String>,
    ) -> Result<Document, CorpusError> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err(CorpusError::InvalidDocument {
                id,
                reason: "empty id".into(),
            });
        }
        if text.contains('\n') || text.contains('\r') {
            return Err(CorpusError::InvalidDocument {
                id,
                reason: "text contains raw newlines; normalize it first".into(),
            });
        }
        let word_count = count_words(&text);
        Ok(Document {
            id,
            source,
            provenance,
            text,
            word_count,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Whitespace tokens excluding `[PAR]`.
    pub fn word_count(&self) -> u64 {
        self.word_count
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Document {
        self.provenance = provenance;
        self
    }
}

/// An ordered set of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    ids: HashSet<String>,
    total_words: u64,
    nongenerated_words: u64,
}

impl Corpus {
    pub fn new() -> Corpus {
        Corpus::default()
    }

    pub fn from_documents(docs: Vec<Document>) -> Result<Corpus, CorpusError> {
        let mut corpus = Corpus::new();
        for doc in docs {
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, doc: Document) -> Result<(), CorpusError> {
        if !self.ids.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId { id: doc.id });
        }
        self.total_words += doc.word_count;
        if doc.provenance != Provenance::Generated {
            self.nongenerated_words += doc.word_count;
        }
        self.docs.push(doc);
        Ok(())
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn total_words(&self) -> u64 {
        self.total_words
    }

    /// Words in documents whose provenance is not `Generated`; the quantity a
    /// training budget constrains.
    pub fn nongenerated_words(&self) -> u64 {
        self.nongenerated_words
    }

    pub fn manifest(&self) -> CorpusManifest {
        self.manifest_with(None, None)
    }

    /// Builds the manifest, optionally recording the budget this corpus was
    /// assembled under and the seed that drew it.
    pub fn manifest_with(&self, budget: Option<u64>, seed: Option<u64>) -> CorpusManifest {
        let mut grouped: BTreeMap<(String, Provenance), (u64, u64)> = BTreeMap::new();
        for doc in &self.docs {
            let key = (doc.source.as_str().to_string(), doc.provenance);
            let entry = grouped.entry(key).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += doc.word_count;
        }
        let entries = grouped
            .into_iter()
            .map(|((source, provenance), (documents, words))| ManifestEntry {
                source: Source::parse(&source),
                provenance,
                documents,
                words,
            })
            .collect();
        CorpusManifest {
            entries,
            total_words: self.total_words,
            nongenerated_words: self.nongenerated_words,
            budget,
            seed,
        }
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

/// Per-(source, provenance) accounting for one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: Source,
    pub provenance: Provenance,
    pub documents: u64,
    pub words: u64,
}

/// Sidecar accounting stored next to every corpus file. `budget`, if present,
/// caps `nongenerated_words`; `seed` records the draw that produced a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub total_words: u64,
    pub nongenerated_words: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CorpusManifest {
    /// Recounts `corpus` from scratch and checks every figure in `self`
    /// against it.
    pub fn verify(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        let fresh = corpus.manifest_with(self.budget, self.seed);
        if fresh.entries != self.entries {
            return Err(CorpusError::ManifestMismatch(
                "per-source entries disagree with recount".into(),
            ));
        }
        if fresh.total_words != self.total_words {
            return Err(CorpusError::ManifestMismatch(format!(
                "total_words {} recounts to {}",
                self.total_words, fresh.total_words
            )));
        }
        if fresh.nongenerated_words != self.nongenerated_words {
            return Err(CorpusError::ManifestMismatch(format!(
                "nongenerated_words {} recounts to {}",
                self.nongenerated_words, fresh.nongenerated_words
            )));
        }
        if let Some(budget) = self.budget {
            if self.nongenerated_words > budget {
                return Err(CorpusError::ManifestMismatch(format!(
                    "nongenerated_words {} exceeds recorded budget {}",
                    self.nongenerated_words, budget
                )));
            }
        }
        Ok(())
    }
}
