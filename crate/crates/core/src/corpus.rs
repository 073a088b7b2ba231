//! The annotated tweet corpus: loading, validation, exploratory statistics,
//! reproducible splits and class weights.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::textprep::{clean_text, word_count};

pub const NUM_CLASSES: usize = 3;

/// Version of the JSON layouts written by this module.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Consensus class of a tweet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Hate = 0,
    Offensive = 1,
    Neither = 2,
}

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::Hate, Label::Offensive, Label::Neither];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    /// Machine name used in JSON responses.
    pub fn name(self) -> &'static str {
        match self {
            Label::Hate => "hate_speech",
            Label::Offensive => "offensive_language",
            Label::Neither => "neither",
        }
    }

    /// Human-readable name used in tables and the interactive loop.
    pub fn display_name(self) -> &'static str {
        match self {
            Label::Hate => "Hate Speech",
            Label::Offensive => "Offensive Language",
            Label::Neither => "Neither",
        }
    }

    pub fn is_harmful(self) -> bool {
        self != Label::Neither
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        Label::from_index(value as usize).ok_or_else(|| format!("class {value} is not in 0..=2"))
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.display_name())
    }
}

/// One annotated row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTweet {
    pub row_id: i64,
    pub count: i64,
    pub hate_votes: i64,
    pub offensive_votes: i64,
    pub neither_votes: i64,
    pub label: Label,
    pub text: String,
    pub text_length: i64,
}

impl LabeledTweet {
    pub fn votes(&self) -> [i64; NUM_CLASSES] {
        [self.hate_votes, self.offensive_votes, self.neither_votes]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.count < 1 {
            return Err(format!("count {} is below 1", self.count));
        }
        if self.votes().iter().any(|&v| v < 0) {
            return Err(format!("negative vote in {:?}", self.votes()));
        }
        let sum: i64 = self.votes().iter().sum();
        if sum != self.count {
            return Err(format!(
                "votes {:?} sum to {sum}, count is {}",
                self.votes(),
                self.count
            ));
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub sha256: String,
}

/// Validated, immutable collection of rows with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<LabeledTweet>,
    provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate row ids and empty input.
    pub fn new(rows: Vec<LabeledTweet>, provenance: Provenance) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert(row.row_id) {
                return Err(Error::InvalidData(format!(
                    "duplicate row id {}",
                    row.row_id
                )));
            }
        }
        Ok(Self { rows, provenance })
    }

    /// Builds an in-memory dataset whose provenance hash covers the row ids,
    /// labels and texts.
    pub fn from_rows(rows: Vec<LabeledTweet>, source: impl Into<String>) -> Result<Self> {
        let mut hasher = Sha256::new();
        for row in &rows {
            hasher.update(row.row_id.to_le_bytes());
            hasher.update([row.label as u8]);
            hasher.update(row.text.as_bytes());
            hasher.update([0]);
        }
        let provenance = Provenance {
            source: source.into(),
            sha256: hex::encode(hasher.finalize()),
        };
        Self::new(rows, provenance)
    }

    pub fn rows(&self) -> &[LabeledTweet] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn row_ids(&self) -> Vec<i64> {
        self.rows.iter().map(|r| r.row_id).collect()
    }

    /// Rows whose ids appear in `ids`, in dataset order.
    pub fn select(&self, ids: &[i64]) -> Result<Dataset> {
        let wanted: HashSet<i64> = ids.iter().copied().collect();
        let rows: Vec<_> = self
            .rows
            .iter()
            .filter(|r| wanted.contains(&r.row_id))
            .cloned()
            .collect();
        if rows.len() != wanted.len() {
            return Err(Error::InvalidData(format!(
                "{} of {} requested row ids are not in the dataset",
                wanted.len() - rows.len(),
                wanted.len()
            )));
        }
        Dataset::new(rows, self.provenance.clone())
    }

    pub fn class_distribution(&self) -> ClassCounts {
        class_distribution(&self.rows)
    }
}

/// A row rejected during loading, kept for the validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantinedRow {
    /// 1-based data record number (header excluded).
    pub record: usize,
    pub row_id: i64,
    pub reason: String,
}

/// Result of [`load_dataset`].
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub quarantined: Vec<QuarantinedRow>,
    /// True when the file had no `text_length` column and word counts were
    /// computed from the tweets.
    pub text_length_recomputed: bool,
}

const ROW_ID_COLUMNS: [&str; 2] = ["Unnamed: 0", ""];

/// Reads a corpus CSV with the columns
/// `Unnamed: 0, count, hate_speech, offensive_language, neither, class, tweet`
/// and an optional `text_length`. The id column may also have an empty
/// header, as in the original release.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let provenance = Provenance {
        source: path.display().to_string(),
        sha256,
    };
    parse_dataset(&bytes, provenance)
}

/// Parses CSV bytes; see [`load_dataset`].
pub fn parse_dataset(bytes: &[u8], provenance: Provenance) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let id_col = ROW_ID_COLUMNS
        .iter()
        .find_map(|n| find(n))
        .ok_or_else(|| Error::MissingColumn("Unnamed: 0".into()))?;
    let count_col = require("count")?;
    let hate_col = require("hate_speech")?;
    let off_col = require("offensive_language")?;
    let neither_col = require("neither")?;
    let class_col = require("class")?;
    let tweet_col = require("tweet")?;
    let length_col = find("text_length");

    let mut rows = Vec::new();
    let mut quarantined = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record_no = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: record_no,
            message: e.to_string(),
        })?;
        let int = |col: usize, name: &str| -> Result<i64> {
            let raw = record.get(col).unwrap_or("").trim();
            raw.parse::<i64>().map_err(|_| Error::Parse {
                row: record_no,
                message: format!("column `{name}` value {raw:?} is not an integer"),
            })
        };
        let row_id = int(id_col, "Unnamed: 0")?;
        let class = int(class_col, "class")?;
        let text = record.get(tweet_col).unwrap_or("").to_string();
        let text_length = match length_col {
            Some(col) => int(col, "text_length")?,
            None => word_count(&text) as i64,
        };
        let count = int(count_col, "count")?;
        let hate_votes = int(hate_col, "hate_speech")?;
        let offensive_votes = int(off_col, "offensive_language")?;
        let neither_votes = int(neither_col, "neither")?;

        let label = match usize::try_from(class).ok().and_then(Label::from_index) {
            Some(label) => label,
            None => {
                quarantined.push(QuarantinedRow {
                    record: record_no,
                    row_id,
                    reason: format!("class {class} is not in 0..=2"),
                });
                continue;
            }
        };
        let row = LabeledTweet {
            row_id,
            count,
            hate_votes,
            offensive_votes,
            neither_votes,
            label,
            text,
            text_length,
        };
        match row.validate() {
            Ok(()) => rows.push(row),
            Err(reason) => quarantined.push(QuarantinedRow {
                record: record_no,
                row_id,
                reason,
            }),
        }
    }
    Ok(LoadedDataset {
        dataset: Dataset::new(rows, provenance)?,
        quarantined,
        text_length_recomputed: length_col.is_none(),
    })
}

/// Number of rows per class, indexed by [`Label::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; NUM_CLASSES]);

impl ClassCounts {
    pub fn get(&self, label: Label) -> usize {
        self.0[label.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

pub fn class_distribution<'a>(rows: impl IntoIterator<Item = &'a LabeledTweet>) -> ClassCounts {
    let mut counts = [0; NUM_CLASSES];
    for row in rows {
        counts[row.label.index()] += 1;
    }
    ClassCounts(counts)
}

/// Numeric columns of the corpus, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "Unnamed: 0")]
    RowId,
    #[serde(rename = "count")]
    Count,
    #[serde(rename = "hate_speech")]
    HateSpeech,
    #[serde(rename = "offensive_language")]
    OffensiveLanguage,
    #[serde(rename = "neither")]
    Neither,
    #[serde(rename = "class")]
    Class,
    #[serde(rename = "text_length")]
    TextLength,
}

impl Column {
    pub const NUMERIC: [Column; 7] = [
        Column::RowId,
        Column::Count,
        Column::HateSpeech,
        Column::OffensiveLanguage,
        Column::Neither,
        Column::Class,
        Column::TextLength,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::RowId => "Unnamed: 0",
            Column::Count => "count",
            Column::HateSpeech => "hate_speech",
            Column::OffensiveLanguage => "offensive_language",
            Column::Neither => "neither",
            Column::Class => "class",
            Column::TextLength => "text_length",
        }
    }

    pub fn value(self, row: &LabeledTweet) -> i64 {
        match self {
            Column::RowId => row.row_id,
            Column::Count => row.count,
            Column::HateSpeech => row.hate_votes,
            Column::OffensiveLanguage => row.offensive_votes,
            Column::Neither => row.neither_votes,
            Column::Class => row.label.index() as i64,
            Column::TextLength => row.text_length,
        }
    }
}

/// Summary statistics of one column (sample standard deviation, linearly
/// interpolated quartiles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    /// Set when fewer than two values exist and `std` is reported as 0.
    pub degenerate: bool,
}

/// Quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn column_stats(values: &[f64]) -> Option<ColumnStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let degenerate = n < 2;
    let std = if degenerate {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(ColumnStats {
        count: n,
        mean,
        std,
        min: sorted[0],
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
        max: sorted[n - 1],
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: Column,
    #[serde(flatten)]
    pub stats: ColumnStats,
}

pub fn descriptive_stats(ds: &Dataset) -> Vec<ColumnSummary> {
    Column::NUMERIC
        .iter()
        .map(|&column| {
            let values: Vec<f64> = ds.rows().iter().map(|r| column.value(r) as f64).collect();
            ColumnSummary {
                column,
                stats: column_stats(&values).expect("datasets are non-empty"),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueCount {
    pub column: String,
    pub unique: usize,
}

/// Distinct values per column, numeric columns first, then `tweet`.
pub fn unique_counts(ds: &Dataset) -> Vec<UniqueCount> {
    let mut out: Vec<UniqueCount> = Column::NUMERIC
        .iter()
        .map(|&column| UniqueCount {
            column: column.name().to_string(),
            unique: ds
                .rows()
                .iter()
                .map(|r| column.value(r))
                .collect::<HashSet<_>>()
                .len(),
        })
        .collect();
    out.push(UniqueCount {
        column: "tweet".into(),
        unique: ds
            .rows()
            .iter()
            .map(|r| r.text.as_str())
            .collect::<HashSet<_>>()
            .len(),
    });
    out
}

/// Most frequent words of the cleaned tweets; ties are ordered
/// lexicographically.
pub fn word_frequencies<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    top_k: usize,
) -> Vec<(String, usize)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for word in clean_text(text).words() {
            *counts.entry(word.to_string()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    ranked
}

/// Stored word count vs. the recomputed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLengthCheck {
    pub recomputed_mean: f64,
    pub stored_mean: f64,
    pub mismatches: Vec<TextLengthMismatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextLengthMismatch {
    pub row_id: i64,
    pub stored: i64,
    pub recomputed: i64,
}

pub fn text_length_check(ds: &Dataset) -> TextLengthCheck {
    let n = ds.len() as f64;
    let mut recomputed_sum = 0.0;
    let mut stored_sum = 0.0;
    let mut mismatches = Vec::new();
    for row in ds.rows() {
        let recomputed = word_count(&row.text) as i64;
        recomputed_sum += recomputed as f64;
        stored_sum += row.text_length as f64;
        if recomputed != row.text_length {
            mismatches.push(TextLengthMismatch {
                row_id: row.row_id,
                stored: row.text_length,
                recomputed,
            });
        }
    }
    TextLengthCheck {
        recomputed_mean: recomputed_sum / n,
        stored_mean: stored_sum / n,
        mismatches,
    }
}

/// How often the consensus label agrees with the plurality of votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVoteConsistency {
    pub consistent_fraction: f64,
    /// Row ids whose label's vote count is below the maximum vote count.
    pub violations: Vec<i64>,
}

pub fn label_vote_consistency(ds: &Dataset) -> LabelVoteConsistency {
    let violations: Vec<i64> = ds
        .rows()
        .iter()
        .filter(|r| {
            let votes = r.votes();
            votes[r.label.index()] < *votes.iter().max().unwrap()
        })
        .map(|r| r.row_id)
        .collect();
    LabelVoteConsistency {
        consistent_fraction: 1.0 - violations.len() as f64 / ds.len() as f64,
        violations,
    }
}

/// Everything the `stats` command reports about a corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdaReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub rows: usize,
    pub quarantined: Vec<QuarantinedRow>,
    pub class_distribution: BTreeMap<String, usize>,
    pub descriptive_stats: Vec<ColumnSummary>,
    pub unique_counts: Vec<UniqueCount>,
    pub text_length_check: TextLengthCheck,
    pub label_vote_consistency: LabelVoteConsistency,
    pub word_frequencies: Vec<(String, usize)>,
}

impl EdaReport {
    pub fn build(loaded: &LoadedDataset, top_k: usize) -> Self {
        let ds = &loaded.dataset;
        let dist = ds.class_distribution();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            provenance: ds.provenance().clone(),
            rows: ds.len(),
            quarantined: loaded.quarantined.clone(),
            class_distribution: Label::ALL
                .iter()
                .map(|&l| (l.index().to_string(), dist.get(l)))
                .collect(),
            descriptive_stats: descriptive_stats(ds),
            unique_counts: unique_counts(ds),
            text_length_check: text_length_check(ds),
            label_vote_consistency: label_vote_consistency(ds),
            word_frequencies: word_frequencies(ds.rows().iter().map(|r| r.text.as_str()), top_k),
        }
    }
}

/// Train/validation/test proportions and shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            val_fraction: 0.15,
            test_fraction: 0.15,
            seed: 42,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = self.fractions();
        if fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config(format!(
                "split fractions must lie in (0, 1), got {fractions:?}"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.train_fraction, self.val_fraction, self.test_fraction]
    }
}

/// Splits `total` into parts proportional to `fractions`: floor each quota,
/// then hand the remaining units to the largest fractional parts (earlier
/// parts win ties).
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| total as f64 * f).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

/// Per-class split sizes whose rows sum to the class counts and whose
/// columns sum to the global split sizes.
pub fn stratified_sizes(class_counts: &[usize], fractions: &[f64; 3]) -> Vec<[usize; 3]> {
    let total: usize = class_counts.iter().sum();
    let split_sizes = apportion(total, fractions);
    let mut cells: Vec<[usize; 3]> = Vec::with_capacity(class_counts.len());
    let mut fracs: Vec<(f64, usize, usize)> = Vec::new();
    for (c, &n) in class_counts.iter().enumerate() {
        let mut row = [0; 3];
        for s in 0..3 {
            let q = n as f64 * fractions[s];
            row[s] = q.floor() as usize;
            fracs.push((q - q.floor(), c, s));
        }
        cells.push(row);
    }
    let mut class_left: Vec<usize> = class_counts
        .iter()
        .zip(&cells)
        .map(|(&n, row)| n - row.iter().sum::<usize>())
        .collect();
    let mut split_left: Vec<usize> = (0..3)
        .map(|s| split_sizes[s] - cells.iter().map(|row| row[s]).sum::<usize>())
        .collect();
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    for &(_, c, s) in &fracs {
        if class_left[c] > 0 && split_left[s] > 0 {
            cells[c][s] += 1;
            class_left[c] -= 1;
            split_left[s] -= 1;
        }
    }
    // Any units the fractional pass could not place go wherever both the
    // class and the split still have room.
    for c in 0..class_counts.len() {
        for s in 0..3 {
            let units = class_left[c].min(split_left[s]);
            cells[c][s] += units;
            class_left[c] -= units;
            split_left[s] -= units;
        }
    }
    cells
}

/// Row ids of each split, enough to rebuild the partition exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub source_sha256: String,
    pub spec: SplitSpec,
    pub train: Vec<i64>,
    pub val: Vec<i64>,
    pub test: Vec<i64>,
}

impl SplitManifest {
    /// Hash over the manifest's JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Splits> {
        if ds.provenance().sha256 != self.source_sha256 {
            return Err(Error::InvalidData(format!(
                "split manifest was made for dataset {} but got {}",
                self.source_sha256,
                ds.provenance().sha256
            )));
        }
        Ok(Splits {
            train: ds.select(&self.train)?,
            val: ds.select(&self.val)?,
            test: ds.select(&self.test)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn manifest(&self, spec: SplitSpec) -> SplitManifest {
        SplitManifest {
            schema_version: REPORT_SCHEMA_VERSION,
            source_sha256: self.train.provenance().sha256.clone(),
            spec,
            train: self.train.row_ids(),
            val: self.val.row_ids(),
            test: self.test.row_ids(),
        }
    }
}

/// Partitions `ds` into train/validation/test sets. Identical seeds give
/// identical partitions; rows keep their dataset order inside each split.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let fractions = spec.fractions();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assignment = vec![0usize; ds.len()];

    if spec.stratified {
        let counts = ds.class_distribution();
        for label in Label::ALL {
            if counts.get(label) < 3 {
                return Err(Error::InvalidData(format!(
                    "class {} has {} row(s); stratified splitting needs at least 3",
                    label.index(),
                    counts.get(label)
                )));
            }
        }
        let sizes = stratified_sizes(&counts.0, &fractions);
        for label in Label::ALL {
            let mut members: Vec<usize> = ds
                .rows()
                .iter()
                .enumerate()
                .filter(|(_, r)| r.label == label)
                .map(|(i, _)| i)
                .collect();
            members.shuffle(&mut rng);
            let [n_train, n_val, _] = sizes[label.index()];
            for (k, &i) in members.iter().enumerate() {
                assignment[i] = if k < n_train {
                    0
                } else if k < n_train + n_val {
                    1
                } else {
                    2
                };
            }
        }
    } else {
        let sizes = apportion(ds.len(), &fractions);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng);
        for (k, &i) in order.iter().enumerate() {
            assignment[i] = if k < sizes[0] {
                0
            } else if k < sizes[0] + sizes[1] {
                1
            } else {
                2
            };
        }
    }

    let mut parts: [Vec<LabeledTweet>; 3] = Default::default();
    for (row, &part) in ds.rows().iter().zip(&assignment) {
        parts[part].push(row.clone());
    }
    let [train, val, test] = parts;
    let provenance = ds.provenance().clone();
    let build = |rows: Vec<LabeledTweet>, name: &str| {
        if rows.is_empty() {
            return Err(Error::InvalidData(format!(
                "{name} split is empty; the dataset is too small for these fractions"
            )));
        }
        Dataset::new(rows, provenance.clone())
    };
    Ok(Splits {
        train: build(train, "train")?,
        val: build(val, "validation")?,
        test: build(test, "test")?,
    })
}

/// Inverse-frequency weights `N / (K * n_c)`; their count-weighted mean over
/// the training rows is exactly one.
pub fn class_weights(counts: ClassCounts) -> Result<[f64; NUM_CLASSES]> {
    let total = counts.total() as f64;
    let mut weights = [0.0; NUM_CLASSES];
    for label in Label::ALL {
        let n = counts.get(label);
        if n == 0 {
            return Err(Error::InvalidData(format!(
                "class {} is absent from the training data",
                label.index()
            )));
        }
        weights[label.index()] = total / (NUM_CLASSES as f64 * n as f64);
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Unnamed: 0,count,hate_speech,offensive_language,neither,class,tweet\n";

    fn parse(csv: &str) -> Result<LoadedDataset> {
        parse_dataset(
            csv.as_bytes(),
            Provenance {
                source: "inline".into(),
                sha256: "0".into(),
            },
        )
    }

    pub(crate) fn row(row_id: i64, label: Label, text: &str) -> LabeledTweet {
        let mut votes = [0; 3];
        votes[label.index()] = 3;
        LabeledTweet {
            row_id,
            count: 3,
            hate_votes: votes[0],
            offensive_votes: votes[1],
            neither_votes: votes[2],
            label,
            text: text.into(),
            text_length: word_count(text) as i64,
        }
    }

    fn balanced(n_per_class: usize) -> Dataset {
        let rows = (0..n_per_class * 3)
            .map(|i| row(i as i64, Label::ALL[i % 3], "some words"))
            .collect();
        Dataset::from_rows(rows, "balanced").unwrap()
    }

    #[test]
    fn loads_valid_and_quarantines_bad_vote_sums() {
        let csv = format!("{HEADER}0,3,2,1,0,0,first tweet\n1,3,2,2,0,0,bad sum\n2,3,0,0,3,2,\"quoted, text\"\n");
        let loaded = parse(&csv).unwrap();
        assert_eq!(loaded.dataset.len(), 2);
        assert_eq!(loaded.quarantined.len(), 1);
        assert_eq!(loaded.quarantined[0].row_id, 1);
        assert_eq!(loaded.quarantined[0].record, 2);
        assert!(loaded.text_length_recomputed);
        assert_eq!(loaded.dataset.rows()[0].text_length, 2);
        assert_eq!(loaded.dataset.rows()[1].text, "quoted, text");
    }

    #[test]
    fn accepts_empty_id_header() {
        let csv = ",count,hate_speech,offensive_language,neither,class,tweet,text_length\n7,3,0,3,0,1,a b c,9\n";
        let loaded = parse(csv).unwrap();
        assert_eq!(loaded.dataset.rows()[0].row_id, 7);
        assert_eq!(loaded.dataset.rows()[0].text_length, 9);
        assert!(!loaded.text_length_recomputed);
    }

    #[test]
    fn missing_tweet_column_is_schema_error() {
        let csv = "Unnamed: 0,count,hate_speech,offensive_language,neither,class\n0,3,3,0,0,0\n";
        match parse(csv) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "tweet"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_class_reports_row() {
        let csv = format!("{HEADER}0,3,3,0,0,0,ok\n1,3,3,0,0,x,bad\n");
        match parse(&csv) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_class_is_quarantined() {
        let csv = format!("{HEADER}0,3,3,0,0,0,ok\n1,3,3,0,0,5,bad\n");
        let loaded = parse(&csv).unwrap();
        assert_eq!(loaded.quarantined.len(), 1);
    }

    #[test]
    fn duplicate_row_ids_rejected() {
        let rows = vec![row(1, Label::Hate, "a"), row(1, Label::Neither, "b")];
        assert!(Dataset::from_rows(rows, "dup").is_err());
    }

    #[test]
    fn class_distribution_cases() {
        let ds = Dataset::from_rows(
            vec![
                row(0, Label::Hate, "a"),
                row(1, Label::Offensive, "b"),
                row(2, Label::Neither, "c"),
            ],
            "three",
        )
        .unwrap();
        assert_eq!(ds.class_distribution(), ClassCounts([1, 1, 1]));
        let none = class_distribution(ds.rows().iter().filter(|r| r.row_id > 10));
        assert_eq!(none, ClassCounts([0, 0, 0]));
    }

    #[test]
    fn single_row_stats_are_degenerate() {
        let ds = Dataset::from_rows(vec![row(0, Label::Hate, "one two")], "one").unwrap();
        let stats = descriptive_stats(&ds);
        let tl = stats.iter().find(|s| s.column == Column::TextLength).unwrap();
        assert_eq!(tl.stats.std, 0.0);
        assert!(tl.stats.degenerate);
        assert_eq!(tl.stats.median, 2.0);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&[5.0], 0.75), 5.0);
    }

    #[test]
    fn word_frequency_ties_are_lexicographic() {
        let texts = ["a a b", "a c"];
        assert_eq!(
            word_frequencies(texts, 2),
            vec![("a".to_string(), 3), ("b".to_string(), 1)]
        );
        assert_eq!(word_frequencies(texts, 50).len(), 3);
    }

    #[test]
    fn apportion_floor_then_distribute() {
        assert_eq!(apportion(24783, &[0.7, 0.15, 0.15]), vec![17348, 3718, 3717]);
        assert_eq!(apportion(100, &[0.7, 0.15, 0.15]), vec![70, 15, 15]);
        assert_eq!(apportion(10, &[0.34, 0.33, 0.33]), vec![4, 3, 3]);
    }

    #[test]
    fn stratified_sizes_respect_margins() {
        let counts = [1430, 19190, 4163];
        let cells = stratified_sizes(&counts, &[0.7, 0.15, 0.15]);
        for (c, row) in cells.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), counts[c]);
        }
        let cols: Vec<usize> = (0..3).map(|s| cells.iter().map(|r| r[s]).sum()).collect();
        assert_eq!(cols, apportion(24783, &[0.7, 0.15, 0.15]));
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let ds = balanced(34);
        let spec = SplitSpec::default();
        let a = split(&ds, &spec).unwrap();
        let b = split(&ds, &spec).unwrap();
        assert_eq!(a.manifest(spec), b.manifest(spec));
        for part in [&a.train, &a.val, &a.test] {
            let d = part.class_distribution();
            let third = part.len() as f64 / 3.0;
            for label in Label::ALL {
                assert!((d.get(label) as f64 - third).abs() <= 1.0);
            }
        }
        let other = split(&ds, &SplitSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a.train.row_ids(), other.train.row_ids());
    }

    #[test]
    fn stratified_split_needs_three_rows_per_class() {
        let mut rows: Vec<_> = (0..10).map(|i| row(i, Label::Offensive, "x")).collect();
        rows.push(row(10, Label::Hate, "y"));
        rows.push(row(11, Label::Neither, "z"));
        rows.push(row(12, Label::Neither, "z"));
        rows.push(row(13, Label::Neither, "z"));
        let ds = Dataset::from_rows(rows, "thin").unwrap();
        assert!(split(&ds, &SplitSpec::default()).is_err());
    }

    #[test]
    fn split_spec_validation() {
        let bad = SplitSpec {
            train_fraction: 0.8,
            ..SplitSpec::default()
        };
        assert!(bad.validate().is_err());
        let zero = SplitSpec {
            train_fraction: 0.85,
            val_fraction: 0.15,
            test_fraction: 0.0,
            ..SplitSpec::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn manifest_round_trip_rebuilds_partition() {
        let ds = balanced(10);
        let spec = SplitSpec::default();
        let splits = split(&ds, &spec).unwrap();
        let manifest = splits.manifest(spec);
        let rebuilt = manifest.apply(&ds).unwrap();
        assert_eq!(rebuilt.test.row_ids(), splits.test.row_ids());
    }

    #[test]
    fn class_weight_values() {
        assert_eq!(class_weights(ClassCounts([5, 5, 5])).unwrap(), [1.0; 3]);
        let w = class_weights(ClassCounts([1430, 19190, 4163])).unwrap();
        assert!((w[0] - 5.777).abs() < 1e-3);
        assert!((w[1] - 0.4305).abs() < 1e-3);
        assert!((w[2] - 1.9845).abs() < 1e-3);
        assert!(class_weights(ClassCounts([0, 3, 3])).is_err());
    }

    #[test]
    fn label_vote_consistency_flags_minority_labels() {
        let mut r = row(0, Label::Hate, "x");
        r.hate_votes = 1;
        r.offensive_votes = 2;
        let ds = Dataset::from_rows(vec![r, row(1, Label::Neither, "y")], "c").unwrap();
        let report = label_vote_consistency(&ds);
        assert_eq!(report.violations, vec![0]);
        assert_eq!(report.consistent_fraction, 0.5);
    }
}
