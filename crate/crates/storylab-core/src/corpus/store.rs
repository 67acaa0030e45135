//! On-disk corpus format: one JSON record per line with fields
//! `{id, source, provenance, text}`, plus a sidecar manifest at
//! `<file>.manifest.json`. Line-delimited records stream, diff, and preserve
//! order; the sidecar lets readers audit word accounting without a full scan.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, CorpusManifest, Document, Provenance, Source};

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    source: Source,
    provenance: Provenance,
    text: String,
}

/// Sidecar manifest path for a corpus file: `corpus.jsonl.manifest.json`.
pub fn manifest_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    corpus_path.with_file_name(name)
}

/// Writes the corpus and a freshly derived manifest.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    write_corpus_with(corpus, path, &corpus.manifest())
}

/// Writes the corpus with a caller-supplied manifest (e.g. one carrying the
/// sampling seed or budget). The manifest is verified against the corpus
/// before anything touches disk.
pub fn write_corpus_with(
    corpus: &Corpus,
    path: &Path,
    manifest: &CorpusManifest,
) -> Result<(), CorpusError> {
    manifest.verify(corpus)?;
    let mut out = BufWriter::new(File::create(path)?);
    for doc in corpus {
        let record = Record {
            id: doc.id().to_string(),
            source: doc.source().clone(),
            provenance: doc.provenance(),
            text: doc.text().to_string(),
        };
        let line = serde_json::to_string(&record).map_err(|e| CorpusError::MalformedRecord {
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let manifest_file = BufWriter::new(File::create(manifest_path(path))?);
    serde_json::to_writer_pretty(manifest_file, manifest).map_err(std::io::Error::from)?;
    Ok(())
}

/// Reads a corpus file; if a sidecar manifest exists it is verified against
/// the freshly counted documents.
pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut corpus = Corpus::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: lineno,
                message: "blank line".into(),
            });
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: lineno,
                message: e.to_string(),
            })?;
        let doc = Document::new(record.id, record.source, record.provenance, record.text)
            .map_err(|e| CorpusError::MalformedRecord {
                line: lineno,
                message: e.to_string(),
            })?;
        corpus.push(doc)?;
    }
    let sidecar = manifest_path(path);
    if sidecar.exists() {
        let manifest = read_manifest(&sidecar)?;
        manifest.verify(&corpus)?;
    }
    Ok(corpus)
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| CorpusError::MalformedRecord {
        line: 0,
        message: format!("manifest: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corpus() -> Corpus {
        let mut c = Corpus::new();
        c.push(
            Document::new("t-1", Source::TinyStories, Provenance::Original, "a b c").unwrap(),
        )
        .unwrap();
        c.push(
            Document::new("g-1", Source::Generated, Provenance::Generated, "x [PAR] y").unwrap(),
        )
        .unwrap();
        c
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = sample_corpus();
        write_corpus(&corpus, &path).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn empty_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_corpus(&Corpus::new(), &path).unwrap();
        let back = read_corpus(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.manifest().total_words, 0);
    }

    #[test]
    fn duplicate_id_is_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let line = r#"{"id":"d","source":"babylm","provenance":"original","text":"hi"}"#;
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        let err = read_corpus(&path);
        assert!(matches!(err, Err(CorpusError::DuplicateId { id }) if id == "d"));
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"source\":\"babylm\",\"provenance\":\"original\",\"text\":\"ok\"}\nnot json\n",
        )
        .unwrap();
        let err = read_corpus(&path);
        assert!(matches!(err, Err(CorpusError::MalformedRecord { line: 2, .. })));
    }

    #[test]
    fn tampered_sidecar_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&sample_corpus(), &path).unwrap();
        let sidecar = manifest_path(&path);
        let mut manifest = read_manifest(&sidecar).unwrap();
        manifest.total_words += 1;
        let file = File::create(&sidecar).unwrap();
        serde_json::to_writer_pretty(file, &manifest).unwrap();
        assert!(matches!(
            read_corpus(&path),
            Err(CorpusError::ManifestMismatch(_))
        ));
    }

    #[test]
    fn write_with_mismatched_manifest_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = sample_corpus();
        let mut manifest = corpus.manifest();
        manifest.nongenerated_words = 999;
        let err = write_corpus_with(&corpus, &path, &manifest);
        assert!(matches!(err, Err(CorpusError::ManifestMismatch(_))));
        assert!(!path.exists());
    }
}
