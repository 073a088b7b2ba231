//! Tweet normalization and model-input tokenization.
//!
//! [`clean_text`] is a fixed cascade of nine rewrites. The order matters and
//! is kept as-is even where it looks surprising: lowercasing runs before the
//! emoticon pass, so emoticons written with uppercase letters (`XD`, `:-P`,
//! `X-(`) can never match and only their punctuation is stripped later.

mod tokenizer;

use std::sync::LazyLock;

use regex::Regex;

pub use tokenizer::{TokenSequence, TokenizerAdapter, SPECIAL_TOKENS};

/// Version tag of the bundled emoticon list.
pub const EMOTICONS_VERSION: &str = "v1";

const EMOTICONS_RAW: &str = include_str!("../../data/emoticons.v1.txt");

static EMOTICONS: LazyLock<Vec<&'static str>> =
    LazyLock::new(|| EMOTICONS_RAW.lines().collect());

// `\s` is Python's whitespace set (Unicode White_Space plus U+001C..U+001F);
// `\w` and `\d` are pinned to ASCII classes.
static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"https?://[^\s\x1c-\x1f]+").unwrap());
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@[A-Za-z0-9_]+").unwrap());
static DIGITS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[0-9]+").unwrap());
static DISALLOWED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[^a-zA-Z?.!,\u{bf}]+").unwrap());
static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[?.!,\u{bf}]").unwrap());
static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"[" ]+"#).unwrap());

/// The 34 emoticon literals removed during cleaning, in list order.
///
/// Duplicates (`xD`, `XP`) are part of the list and kept.
pub fn emoticons() -> &'static [&'static str] {
    &EMOTICONS
}

/// Output of [`clean_text`]: empty, or `[a-z]+` words joined by single spaces.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct CleanText(String);

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ').filter(|w| !w.is_empty())
    }
}

impl std::ops::Deref for CleanText {
    type Target = str;

    fn deref(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CleanText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for CleanText {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// Normalizes a raw tweet to lowercase ASCII words separated by single spaces.
///
/// Total: every input produces an output, possibly empty.
pub fn clean_text(raw: &str) -> CleanText {
    let text = raw.to_lowercase();
    let text = URL.replace_all(&text, "");
    let text = MENTION.replace_all(&text, "");
    let mut text = DIGITS.replace_all(&text, "").into_owned();
    for emoticon in emoticons() {
        if text.contains(emoticon) {
            text = text.replace(emoticon, "");
        }
    }
    let text = DISALLOWED.replace_all(&text, " ");
    let text = PUNCT.replace_all(&text, " ");
    let text = SPACES.replace_all(&text, " ");
    CleanText(text.trim().to_string())
}

/// Number of whitespace-separated tokens, with the same notion of whitespace
/// as Python's `str.split()` (Unicode whitespace plus the ASCII separator
/// controls U+001C..U+001F).
pub fn word_count(raw: &str) -> usize {
    raw.split(is_split_whitespace)
        .filter(|piece| !piece.is_empty())
        .count()
}

fn is_split_whitespace(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}
