//! Committed BLEU cases checked three ways: the library implementation, an
//! independent brute-force implementation written here, and expected values
//! frozen in the fixture. All three must agree.

use std::collections::HashMap;

use serde::Deserialize;
use storylab_core::diversity::Scale;
use storylab_core::{bleu, BleuConfig};

#[derive(Deserialize)]
struct BleuCase {
    name: String,
    candidate: String,
    references: Vec<String>,
    max_n: usize,
    expected_unit: f64,
}

fn load_cases() -> Vec<BleuCase> {
    serde_json::from_str(include_str!("fixtures/bleu_cases.json")).unwrap()
}

/// Direct textbook implementation, structured nothing like the library's
/// (string-keyed grams, no interning, no incremental state).
fn brute_force_bleu(candidate: &str, references: &[String], max_n: usize) -> f64 {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refs: Vec<Vec<&str>> = references
        .iter()
        .map(|r| r.split_whitespace().collect())
        .collect();

    let grams_of = |tokens: &[&str], n: usize| -> HashMap<String, u64> {
        let mut out = HashMap::new();
        if tokens.len() >= n {
            for window in tokens.windows(n) {
                *out.entry(window.join("\u{1}")).or_insert(0) += 1;
            }
        }
        out
    };

    let mut log_sum = 0.0f64;
    for n in 1..=max_n {
        let cand_grams = grams_of(&cand, n);
        let total: u64 = cand_grams.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut clipped = 0u64;
        for (gram, &count) in &cand_grams {
            let best_in_refs = refs
                .iter()
                .map(|r| grams_of(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(best_in_refs);
        }
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let precision = (log_sum / max_n as f64).exp();

    let mut best: Option<usize> = None;
    for r in &refs {
        let len = r.len();
        let better = match best {
            None => true,
            Some(cur) => {
                let (d_new, d_cur) = (
                    len.abs_diff(cand.len()),
                    cur.abs_diff(cand.len()),
                );
                d_new < d_cur || (d_new == d_cur && len < cur)
            }
        };
        if better {
            best = Some(len);
        }
    }
    let r = best.unwrap();
    let bp = if cand.len() >= r {
        1.0
    } else {
        (1.0 - r as f64 / cand.len() as f64).exp()
    };
    precision * bp
}

#[test]
fn library_matches_brute_force_and_frozen_values() {
    let cases = load_cases();
    assert_eq!(cases.len(), 10, "fixture must hold all ten cases");
    for case in &cases {
        let config = BleuConfig {
            max_n: case.max_n,
            scale: Scale::Unit,
        };
        let refs: Vec<&str> = case.references.iter().map(String::as_str).collect();
        let library = bleu(&case.candidate, &refs, &config).unwrap();
        let brute = brute_force_bleu(&case.candidate, &case.references, case.max_n);
        assert!(
            (brute - case.expected_unit).abs() < 1e-12,
            "{}: brute force {brute} vs frozen {}",
            case.name,
            case.expected_unit
        );
        assert!(
            (library - case.expected_unit).abs() < 1e-9,
            "{}: library {library} vs frozen {}",
            case.name,
            case.expected_unit
        );
        assert!(
            (library - brute).abs() < 1e-9,
            "{}: library {library} vs brute force {brute}",
            case.name
        );
    }
}

#[test]
fn exact_endpoints_hold_without_tolerance() {
    let cases = load_cases();
    let identical = cases
        .iter()
        .find(|c| c.name == "identical_single_reference")
        .unwrap();
    let refs: Vec<&str> = identical.references.iter().map(String::as_str).collect();
    let config = BleuConfig {
        max_n: identical.max_n,
        scale: Scale::Unit,
    };
    assert_eq!(bleu(&identical.candidate, &refs, &config).unwrap(), 1.0);

    let disjoint = cases
        .iter()
        .find(|c| c.name == "fully_disjoint_vocabulary")
        .unwrap();
    let refs: Vec<&str> = disjoint.references.iter().map(String::as_str).collect();
    let config = BleuConfig {
        max_n: disjoint.max_n,
        scale: Scale::Unit,
    };
    assert_eq!(bleu(&disjoint.candidate, &refs, &config).unwrap(), 0.0);
}
