//! Cleaning cascade checked against the golden corpus and a regex-free
//! step-by-step reference implementation.

mod common;

use common::trace_clean;
use hatemod_core::textprep::{clean_text, emoticons};
use proptest::prelude::*;

fn golden_cases() -> Vec<(String, String)> {
    common::read_golden(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/clean_golden.tsv"
    ))
}

#[test]
fn golden_corpus_matches_byte_for_byte() {
    let cases = golden_cases();
    assert!(cases.len() >= 30);
    for (raw, expected) in &cases {
        assert_eq!(clean_text(raw).as_str(), expected, "input {raw:?}");
        assert_eq!(trace_clean(raw), *expected, "oracle on {raw:?}");
    }
}

#[test]
fn golden_corpus_covers_every_emoticon() {
    let cases = golden_cases();
    for emoticon in emoticons() {
        assert!(
            cases.iter().any(|(raw, _)| raw.contains(emoticon)),
            "no golden case contains {emoticon:?}"
        );
    }
}

#[test]
fn ordering_witness() {
    // Removing emoticons before lowercasing would delete "X-(" entirely.
    let raw = "X-(";
    let mut reordered = raw.to_string();
    for e in emoticons() {
        reordered = reordered.replace(e, "");
    }
    let reordered = clean_text(&reordered);
    assert_eq!(clean_text(raw).as_str(), "x");
    assert_eq!(reordered.as_str(), "");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_trace_oracle(raw in common::tweetish()) {
        prop_assert_eq!(clean_text(&raw).into_string(), trace_clean(&raw));
    }

    #[test]
    fn idempotent(raw in common::tweetish()) {
        let once = clean_text(&raw);
        prop_assert_eq!(clean_text(&once), once);
    }

    #[test]
    fn output_alphabet(raw in common::tweetish()) {
        let out = clean_text(&raw);
        prop_assert!(out.chars().all(|c| c.is_ascii_lowercase() || c == ' '));
        prop_assert!(!out.starts_with(' ') && !out.ends_with(' '));
        prop_assert!(!out.contains("  "));
    }

    #[test]
    fn arbitrary_unicode_never_panics(raw in any::<String>()) {
        let out = clean_text(&raw);
        prop_assert!(out.chars().all(|c| c.is_ascii_lowercase() || c == ' '));
    }
}
