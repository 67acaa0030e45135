//! Text normalization, rule set v1.
//!
//! Raw input arrives with typographic quotes, control characters, and
//! hard-wrapped or multi-paragraph layout. Normalization flattens each
//! document to a single line of space-separated tokens:
//!
//! a. typographic quotation marks become ASCII double quotes; a right single
//!    quote between two alphanumerics is treated as an apostrophe instead
//! b. control characters and zero-width characters are removed (tabs count
//!    as spaces)
//! c. one or more blank lines become a single ` [PAR] ` token; single line
//!    breaks inside a paragraph become spaces
//! d. runs of spaces collapse to one space
//! e. leading and trailing whitespace is stripped
//!
//! The rules are fixed: changing them changes word counts and therefore every
//! budget downstream. Unknown scripts pass through untouched.

use super::{CorpusError, Document, Provenance, Source};

/// Paragraph-break token. Appears in document text, excluded from word
/// counts.
pub const PAR: &str = "[PAR]";

const DOUBLE_QUOTES: &[char] = &[
    '\u{201C}', '\u{201D}', '\u{201E}', '\u{201F}', // curly/low double
    '\u{00AB}', '\u{00BB}', '\u{2039}', '\u{203A}', // guillemets
    '\u{2018}', // left single: opens quoted speech
];

const ZERO_WIDTH: &[char] = &[
    '\u{200B}', '\u{200C}', '\u{200D}', '\u{2060}', '\u{FEFF}', '\u{00AD}',
];

/// Whitespace-delimited tokens, `[PAR]` included.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Number of whitespace-delimited tokens, excluding `[PAR]`.
pub fn count_words(text: &str) -> u64 {
    tokenize(text).filter(|t| *t != PAR).count() as u64
}

/// Applies rules a-e. Idempotent: normalizing normalized text is a no-op.
pub fn normalize_text(raw: &str) -> String {
    let raw = raw.replace("\r\n", "\n");
    let mut cleaned = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    let mut prev: Option<char> = None;
    while let Some(ch) = chars.next() {
        let out = match ch {
            '\r' => Some('\n'),
            '\t' => Some(' '),
            c if DOUBLE_QUOTES.contains(&c) => Some('"'),
            // Right single quote: apostrophe inside a word ("don't"),
            // closing quote everywhere else.
            '\u{2019}' => {
                let prev_alnum = prev.is_some_and(|p| p.is_alphanumeric());
                let next_alnum = chars.peek().is_some_and(|n| n.is_alphanumeric());
                if prev_alnum && next_alnum {
                    Some('\'')
                } else {
                    Some('"')
                }
            }
            c if ZERO_WIDTH.contains(&c) => None,
            c if c.is_control() && c != '\n' => None,
            c => Some(c),
        };
        if let Some(c) = out {
            cleaned.push(c);
        }
        prev = Some(ch);
    }

    // Blank-line runs separate paragraphs; everything inside a paragraph
    // joins into one line.
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in cleaned.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join(" "));
    }
    let joined = paragraphs.join(&format!(" {PAR} "));

    // Collapse space runs and trim in one pass.
    let mut out = String::with_capacity(joined.len());
    for tok in joined.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Normalizes raw text into a [`Document`]. Provenance defaults to
/// `Generated` for generated sources and `Original` otherwise.
pub fn normalize_document(
    raw: &str,
    source: Source,
    id: impl Into<String>,
) -> Result<Document, CorpusError> {
    let text = normalize_text(raw);
    if count_words(&text) == 0 {
        return Err(CorpusError::EmptyAfterNormalization);
    }
    let provenance = match source {
        Source::Generated => Provenance::Generated,
        _ => Provenance::Original,
    };
    Document::new(id, source, provenance, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curly_quotes_and_paragraph_break() {
        let doc =
            normalize_document("He said, \u{201C}hi\u{201D}.\n\nBye.", Source::TinyStories, "d")
                .unwrap();
        assert_eq!(doc.text(), "He said, \"hi\". [PAR] Bye.");
        // Whitespace tokens minus [PAR]: He / said, / "hi". / Bye.
        assert_eq!(doc.word_count(), 4);
    }

    #[test]
    fn plain_text_is_untouched() {
        let doc = normalize_document("plain text", Source::BabyLm, "d").unwrap();
        assert_eq!(doc.text(), "plain text");
        assert_eq!(doc.word_count(), 2);
    }

    #[test]
    fn count_words_basics() {
        assert_eq!(count_words(""), 0);
        assert_eq!(count_words("a b [PAR] c"), 3);
        assert_eq!(count_words("   "), 0);
    }

    #[test]
    fn single_newlines_join_paragraph_lines() {
        assert_eq!(normalize_text("one\ntwo\nthree"), "one two three");
    }

    #[test]
    fn multiple_blank_lines_collapse_to_one_break() {
        assert_eq!(normalize_text("a\n\n\n\nb"), "a [PAR] b");
    }

    #[test]
    fn crlf_is_a_plain_line_break() {
        assert_eq!(normalize_text("a\r\nb"), "a b");
        assert_eq!(normalize_text("a\r\n\r\nb"), "a [PAR] b");
    }

    #[test]
    fn apostrophe_vs_closing_quote() {
        assert_eq!(normalize_text("don\u{2019}t"), "don't");
        assert_eq!(
            normalize_text("\u{2018}hello there\u{2019} she said"),
            "\"hello there\" she said"
        );
    }

    #[test]
    fn control_and_zero_width_removed() {
        assert_eq!(normalize_text("a\u{200B}b\u{0007}c"), "abc");
        assert_eq!(normalize_text("a\tb"), "a b");
    }

    #[test]
    fn whitespace_collapses_and_trims() {
        assert_eq!(normalize_text("  a   b\t\tc  "), "a b c");
    }

    #[test]
    fn leading_and_trailing_blank_lines_produce_no_break() {
        assert_eq!(normalize_text("\n\n\na b\n\n\n"), "a b");
    }

    #[test]
    fn idempotent_on_examples() {
        for raw in [
            "He said, \u{201C}hi\u{201D}.\n\nBye.",
            "a\n\nb\n\nc",
            "don\u{2019}t \u{2018}stop\u{2019}",
            "  spaced\tout  ",
        ] {
            let once = normalize_text(raw);
            assert_eq!(normalize_text(&once), once, "not idempotent for {raw:?}");
        }
    }

    #[test]
    fn empty_after_normalization_is_an_error() {
        for raw in ["", "   \n\n  ", "\u{200B}\u{0007}"] {
            let err = normalize_document(raw, Source::BabyLm, "d");
            assert!(matches!(err, Err(CorpusError::EmptyAfterNormalization)));
        }
    }

    #[test]
    fn generated_source_gets_generated_provenance() {
        let doc = normalize_document("some words", Source::Generated, "g").unwrap();
        assert_eq!(doc.provenance(), Provenance::Generated);
    }
}
