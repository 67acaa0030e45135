//! Minimal-pair evaluation: a scorer is correct on a pair when it assigns
//! the acceptable sentence a strictly higher log probability than the
//! unacceptable one. Exact ties count as incorrect and are tallied
//! separately, so a degenerate scorer that maps everything to one value
//! scores 0, not 0.5.
//!
//! Accuracy is reported two ways: `macro_average` weights every group
//! equally regardless of size (the headline number), `micro_average` weights
//! every pair equally. Both are exact ratios of integer tallies.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lm::{LmError, Scorer};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("suite contains no pairs")]
    EmptySuite,
    #[error("invalid pair {uid}: {reason}")]
    InvalidPair { uid: String, reason: String },
    #[error("scorer failed on pair {uid}: {source}")]
    ScorerFailed {
        uid: String,
        #[source]
        source: LmError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Blimp,
    BlimpSupplement,
    Ewok,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub uid: String,
    pub good_text: String,
    pub bad_text: String,
    pub group: String,
    pub suite: Suite,
}

impl MinimalPair {
    pub fn new(
        uid: impl Into<String>,
        good_text: impl Into<String>,
        bad_text: impl Into<String>,
        group: impl Into<String>,
        suite: Suite,
    ) -> Result<MinimalPair, EvalError> {
        let pair = MinimalPair {
            uid: uid.into(),
            good_text: good_text.into(),
            bad_text: bad_text.into(),
            group: group.into(),
            suite,
        };
        if pair.uid.is_empty() {
            return Err(EvalError::InvalidPair {
                uid: "<empty>".into(),
                reason: "uid must be nonempty".into(),
            });
        }
        if pair.group.is_empty() {
            return Err(EvalError::InvalidPair {
                uid: pair.uid,
                reason: "group must be nonempty".into(),
            });
        }
        if pair.good_text == pair.bad_text {
            return Err(EvalError::InvalidPair {
                uid: pair.uid,
                reason: "good and bad texts are identical".into(),
            });
        }
        Ok(pair)
    }
}

#[derive(Deserialize)]
struct PairRecord {
    uid: String,
    good: String,
    bad: String,
    group: String,
}

/// Reads a JSONL suite of `{uid, good, bad, group}` records. Blank lines,
/// duplicate uids, and invalid pairs are malformed, reported with their
/// 1-based line number.
pub fn load_pairs(path: &Path, suite: Suite) -> Result<Vec<MinimalPair>, EvalError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut pairs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let malformed = |message: String| EvalError::MalformedRecord {
            line: lineno,
            message,
        };
        if line.trim().is_empty() {
            return Err(malformed("blank line".into()));
        }
        let record: PairRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(record.uid.clone()) {
            return Err(malformed(format!("duplicate uid {:?}", record.uid)));
        }
        let pair = MinimalPair::new(record.uid, record.good, record.bad, record.group, suite)
            .map_err(|e| malformed(e.to_string()))?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_group: BTreeMap<String, GroupResult>,
    /// Unweighted mean of per-group accuracies.
    pub macro_average: f64,
    /// Correct over total across all pairs.
    pub micro_average: f64,
    pub scorer_id: String,
    pub tie_count: u64,
    pub total_pairs: u64,
}

/// Scores every pair, failing fast on the first scorer error (with the
/// pair's uid attached). Correct means log_prob(good) > log_prob(bad).
pub fn score_pairs(pairs: &[MinimalPair], scorer: &dyn Scorer) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    let mut tallies: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let mut tie_count = 0u64;
    let mut correct_total = 0u64;
    for pair in pairs {
        let on_err = |source: LmError| EvalError::ScorerFailed {
            uid: pair.uid.clone(),
            source,
        };
        let good = scorer.log_prob(&pair.good_text).map_err(on_err)?;
        let bad = scorer.log_prob(&pair.bad_text).map_err(on_err)?;
        if good == bad {
            tie_count += 1;
        }
        let correct = good > bad;
        let slot = tallies.entry(pair.group.as_str()).or_insert((0, 0));
        slot.1 += 1;
        if correct {
            slot.0 += 1;
            correct_total += 1;
        }
    }
    let per_group: BTreeMap<String, GroupResult> = tallies
        .into_iter()
        .map(|(group, (correct, total))| {
            (
                group.to_string(),
                GroupResult {
                    correct,
                    total,
                    accuracy: correct as f64 / total as f64,
                },
            )
        })
        .collect();
    let macro_average =
        per_group.values().map(|g| g.accuracy).sum::<f64>() / per_group.len() as f64;
    let micro_average = correct_total as f64 / pairs.len() as f64;
    Ok(EvalReport {
        per_group,
        macro_average,
        micro_average,
        scorer_id: scorer.scorer_id(),
        tie_count,
        total_pairs: pairs.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores text by a pure function of the text; no model involved.
    pub(crate) struct FnScorer<F: Fn(&str) -> f64>(pub F);

    impl<F: Fn(&str) -> f64> Scorer for FnScorer<F> {
        fn log_prob(&self, text: &str) -> Result<f64, LmError> {
            Ok((self.0)(text))
        }
        fn scorer_id(&self) -> String {
            "fn-scorer".into()
        }
    }

    fn pair(uid: &str, good: &str, bad: &str, group: &str) -> MinimalPair {
        MinimalPair::new(uid, good, bad, group, Suite::Custom).unwrap()
    }

    #[test]
    fn longer_is_better_scorer_hand_tally() {
        // Scorer favors longer text. Group g1: both pairs correct; group g2:
        // one of two correct. Macro = (1.0 + 0.5) / 2, micro = 3/4.
        let pairs = vec![
            pair("p1", "a much longer sentence", "short", "g1"),
            pair("p2", "also quite long here", "tiny", "g1"),
            pair("p3", "long enough to win", "no", "g2"),
            pair("p4", "x", "a very long loser", "g2"),
        ];
        let scorer = FnScorer(|t: &str| t.len() as f64 - 100.0);
        let report = score_pairs(&pairs, &scorer).unwrap();
        assert_eq!(report.per_group["g1"].correct, 2);
        assert_eq!(report.per_group["g2"].correct, 1);
        assert!((report.macro_average - 0.75).abs() < 1e-12);
        assert!((report.micro_average - 0.75).abs() < 1e-12);
        assert_eq!(report.tie_count, 0);
        assert_eq!(report.total_pairs, 4);
    }

    #[test]
    fn macro_and_micro_diverge_on_unbalanced_groups() {
        // big: 3 pairs all correct; small: 1 pair incorrect.
        // Macro = (1.0 + 0.0) / 2 = 0.5; micro = 3/4.
        let pairs = vec![
            pair("b1", "aaaa", "a", "big"),
            pair("b2", "bbbb", "b", "big"),
            pair("b3", "cccc", "c", "big"),
            pair("s1", "d", "dddd", "small"),
        ];
        let scorer = FnScorer(|t: &str| t.len() as f64);
        let report = score_pairs(&pairs, &scorer).unwrap();
        assert!((report.macro_average - 0.5).abs() < 1e-12);
        assert!((report.micro_average - 0.75).abs() < 1e-12);
    }

    #[test]
    fn exact_ties_are_incorrect_and_tallied() {
        let pairs = vec![pair("t1", "same length", "abcd length", "g")];
        let scorer = FnScorer(|t: &str| t.len() as f64);
        let report = score_pairs(&pairs, &scorer).unwrap();
        assert_eq!(report.tie_count, 1);
        assert_eq!(report.per_group["g"].correct, 0);
        assert_eq!(report.macro_average, 0.0);
    }

    #[test]
    fn monotone_transforms_preserve_decisions() {
        let pairs = vec![
            pair("p1", "one two three four", "one", "g1"),
            pair("p2", "z", "a b c d e f", "g1"),
            pair("p3", "mid size text", "m", "g2"),
        ];
        let base = FnScorer(|t: &str| -(t.len() as f64));
        let affine = FnScorer(|t: &str| 2.0 * -(t.len() as f64) + 7.0);
        let r0 = score_pairs(&pairs, &base).unwrap();
        let r1 = score_pairs(&pairs, &affine).unwrap();
        assert_eq!(r0.per_group, r1.per_group);
        assert_eq!(r0.macro_average, r1.macro_average);
    }

    #[test]
    fn scorer_failure_carries_the_uid() {
        let pairs = vec![pair("will-fail", "good text", "bad text", "g")];
        struct Failing;
        impl Scorer for Failing {
            fn log_prob(&self, _: &str) -> Result<f64, LmError> {
                Err(LmError::EmptyText)
            }
            fn scorer_id(&self) -> String {
                "failing".into()
            }
        }
        let err = score_pairs(&pairs, &Failing).unwrap_err();
        match err {
            EvalError::ScorerFailed { uid, .. } => assert_eq!(uid, "will-fail"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn invalid_pairs_are_rejected_at_construction() {
        assert!(MinimalPair::new("u", "same", "same", "g", Suite::Custom).is_err());
        assert!(MinimalPair::new("u", "a", "b", "", Suite::Custom).is_err());
        assert!(MinimalPair::new("", "a", "b", "g", Suite::Custom).is_err());
    }

    #[test]
    fn load_pairs_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.jsonl");
        std::fs::write(
            &path,
            "{\"uid\":\"u1\",\"good\":\"a\",\"bad\":\"b\",\"group\":\"g\"}\nnot json\n",
        )
        .unwrap();
        match load_pairs(&path, Suite::Blimp).unwrap_err() {
            EvalError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_pairs_rejects_duplicates_and_empty_suites() {
        let dir = tempfile::tempdir().unwrap();
        let dup = dir.path().join("dup.jsonl");
        std::fs::write(
            &dup,
            "{\"uid\":\"u\",\"good\":\"a\",\"bad\":\"b\",\"group\":\"g\"}\n\
             {\"uid\":\"u\",\"good\":\"c\",\"bad\":\"d\",\"group\":\"g\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_pairs(&dup, Suite::Ewok),
            Err(EvalError::MalformedRecord { line: 2, .. })
        ));
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_pairs(&empty, Suite::Ewok),
            Err(EvalError::EmptySuite)
        ));
    }

    #[test]
    fn load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.jsonl");
        std::fs::write(
            &path,
            "{\"uid\":\"u1\",\"good\":\"the cats sleep\",\"bad\":\"the cats sleeps\",\"group\":\"agreement\"}\n",
        )
        .unwrap();
        let pairs = load_pairs(&path, Suite::BlimpSupplement).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].uid, "u1");
        assert_eq!(pairs[0].suite, Suite::BlimpSupplement);
        assert_eq!(pairs[0].group, "agreement");
    }
}
