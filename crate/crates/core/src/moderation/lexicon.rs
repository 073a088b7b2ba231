//! Word-for-word replacement of offensive terms.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};

/// What counts as a word: letters, digits, underscores and apostrophes.
static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{L}\p{N}_']+").expect("static regex"));

/// Offensive term to neutral replacement. Terms are single lowercase words,
/// and no replacement contains a term, so one pass is final.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new<I, K, V>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let entries: BTreeMap<String, String> = entries
            .into_iter()
            .map(|(k, v)| (k.into(), v.into()))
            .collect();
        for (term, replacement) in &entries {
            let whole = WORD.find(term).is_some_and(|m| m.as_str() == term);
            if !whole || term.to_lowercase() != *term {
                return Err(Error::Config(format!(
                    "lexicon term `{term}` must be a single lowercase word"
                )));
            }
            if let Some(hit) = WORD
                .find_iter(replacement)
                .map(|m| m.as_str().to_lowercase())
                .find(|w| entries.contains_key(w))
            {
                return Err(Error::Config(format!(
                    "lexicon replacement `{replacement}` for `{term}` contains the term `{hit}`"
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Reads `term<TAB>replacement` lines (comma-separated for `.csv` files).
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let delimiter = if path.extension().is_some_and(|e| e == "csv") {
            b','
        } else {
            b'\t'
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(false)
            .comment(Some(b'#'))
            .flexible(false)
            .from_path(path)
            .map_err(|e| Error::Config(format!("lexicon {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| Error::Config(format!("lexicon {}: {e}", path.display())))?;
            if record.len() != 2 {
                return Err(Error::Config(format!(
                    "lexicon {} record {}: expected 2 fields, got {}",
                    path.display(),
                    line + 1,
                    record.len()
                )));
            }
            entries.push((record[0].trim().to_string(), record[1].trim().to_string()));
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One left-to-right pass: each word whose lowercase form is a term is
    /// replaced; everything else, including spacing and punctuation, is kept.
    pub fn rewrite(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for m in WORD.find_iter(text) {
            out.push_str(&text[last..m.start()]);
            match self.entries.get(&m.as_str().to_lowercase()) {
                Some(replacement) => out.push_str(replacement),
                None => out.push_str(m.as_str()),
            }
            last = m.end();
        }
        out.push_str(&text[last..]);
        out
    }
}
