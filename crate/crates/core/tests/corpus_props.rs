//! Corpus statistics and splitting checked against brute-force references.

use std::collections::HashSet;

use hatemod_core::corpus::{
    class_weights, descriptive_stats, load_dataset, split, unique_counts, word_frequencies,
    Column, Dataset, Label, LabeledTweet, SplitSpec,
};
use proptest::prelude::*;

fn tweet(row_id: i64, label: Label, votes: [i64; 3], text_length: i64) -> LabeledTweet {
    LabeledTweet {
        row_id,
        count: votes.iter().sum(),
        hate_votes: votes[0],
        offensive_votes: votes[1],
        neither_votes: votes[2],
        label,
        text: format!("tweet number {row_id}"),
        text_length,
    }
}

fn dataset_strategy(max_rows: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec((0usize..3, 0i64..4, 0i64..4, 1i64..4, 0i64..60), 1..=max_rows).prop_map(
        |specs| {
            let rows = specs
                .into_iter()
                .enumerate()
                .map(|(i, (label, a, b, c, len))| {
                    tweet(i as i64 * 3 + 1, Label::ALL[label], [a, b, c], len)
                })
                .collect();
            Dataset::from_rows(rows, "generated").unwrap()
        },
    )
}

/// Quantile by explicit rank arithmetic on a sorted copy.
fn oracle_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() as f64 - 1.0) * q;
    let below = h.floor();
    let i = below as usize;
    if i + 1 >= v.len() {
        return v[i];
    }
    v[i] * (1.0 - (h - below)) + v[i + 1] * (h - below)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn stats_match_sort_based_oracle(ds in dataset_strategy(100)) {
        for summary in descriptive_stats(&ds) {
            let values: Vec<f64> = ds.rows().iter().map(|r| summary.column.value(r) as f64).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let s = summary.stats;
            prop_assert_eq!(s.count, values.len());
            prop_assert!(close(s.mean, mean));
            prop_assert!(close(s.std, var.sqrt()));
            prop_assert_eq!(s.min, values.iter().cloned().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(s.max, values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            prop_assert!(close(s.q25, oracle_quantile(&values, 0.25)));
            prop_assert!(close(s.median, oracle_quantile(&values, 0.5)));
            prop_assert!(close(s.q75, oracle_quantile(&values, 0.75)));
        }
    }

    #[test]
    fn unique_counts_match_sets(ds in dataset_strategy(100)) {
        for entry in unique_counts(&ds) {
            let expected = if entry.column == "tweet" {
                ds.rows().iter().map(|r| r.text.clone()).collect::<HashSet<_>>().len()
            } else {
                let col = Column::NUMERIC.iter().find(|c| c.name() == entry.column).unwrap();
                ds.rows().iter().map(|r| col.value(r)).collect::<HashSet<_>>().len()
            };
            prop_assert_eq!(entry.unique, expected);
        }
    }

    #[test]
    fn split_is_a_partition(ds in dataset_strategy(120), seed in any::<u64>(), stratified in any::<bool>()) {
        let spec = SplitSpec { seed, stratified, ..SplitSpec::default() };
        let counts = ds.class_distribution();
        match split(&ds, &spec) {
            Ok(parts) => {
                let ids: Vec<Vec<i64>> = [&parts.train, &parts.val, &parts.test]
                    .iter()
                    .map(|p| p.row_ids())
                    .collect();
                let mut all: Vec<i64> = ids.concat();
                prop_assert_eq!(all.len(), ds.len());
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), ds.len());
                let again = split(&ds, &spec).unwrap();
                prop_assert_eq!(again.test.row_ids(), parts.test.row_ids());
            }
            Err(_) => {
                let thin = stratified && Label::ALL.iter().any(|&l| counts.get(l) < 3);
                prop_assert!(thin || ds.len() < 10, "unexpected split failure on {} rows", ds.len());
            }
        }
    }

    #[test]
    fn weighted_mean_is_one(ds in dataset_strategy(100)) {
        let counts = ds.class_distribution();
        match class_weights(counts) {
            Ok(w) => {
                let total: f64 = Label::ALL.iter().map(|&l| counts.get(l) as f64 * w[l.index()]).sum();
                prop_assert!((total / ds.len() as f64 - 1.0).abs() < 1e-9);
            }
            Err(_) => prop_assert!(Label::ALL.iter().any(|&l| counts.get(l) == 0)),
        }
    }
}

#[test]
fn canonical_sized_split_has_expected_sizes() {
    // Same class counts as the public corpus.
    let counts = [(Label::Hate, 1430), (Label::Offensive, 19190), (Label::Neither, 4163)];
    let mut rows = Vec::new();
    for (label, n) in counts {
        for _ in 0..n {
            let id = rows.len() as i64;
            let mut votes = [0; 3];
            votes[label.index()] = 3;
            rows.push(tweet(id, label, votes, 5));
        }
    }
    let ds = Dataset::from_rows(rows, "canonical-shaped").unwrap();
    let parts = split(&ds, &SplitSpec::default()).unwrap();
    let sizes = [parts.train.len(), parts.val.len(), parts.test.len()];
    assert_eq!(sizes.iter().sum::<usize>(), 24783);
    assert_eq!(sizes[0], 17348);
    assert!(sizes[1].abs_diff(3717) <= 1 && sizes[2].abs_diff(3718) <= 1);
    // Each class keeps its share in every split to within one row.
    for part in [&parts.train, &parts.val, &parts.test] {
        for (label, n) in counts {
            let expected = n as f64 * part.len() as f64 / 24783.0;
            assert!((part.class_distribution().get(label) as f64 - expected).abs() <= 1.0);
        }
    }
}

#[test]
fn word_frequency_fixture() {
    let ranked = word_frequencies(["a a b", "a c"], 2);
    assert_eq!(ranked, vec![("a".to_string(), 3), ("b".to_string(), 1)]);
}

#[test]
fn loads_fixture_file_with_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.csv");
    std::fs::write(
        &path,
        ",count,hate_speech,offensive_language,neither,class,tweet\n\
         0,3,2,1,0,0,\"first, with comma\"\n\
         1,3,2,2,0,0,bad sum\n\
         2,3,0,0,3,2,\"multi\nline\"\n",
    )
    .unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded.dataset.len(), 2);
    assert_eq!(loaded.quarantined.len(), 1);
    assert_eq!(loaded.dataset.provenance().sha256.len(), 64);
    assert_eq!(loaded.dataset.rows()[1].text_length, 2);
}

/// Path of the public 24,783-row corpus, supplied by the environment.
fn canonical_path() -> String {
    std::env::var("HATEMOD_DATASET")
        .expect("set HATEMOD_DATASET to the labeled tweet CSV to run this test")
}

#[test]
#[ignore = "needs canonical dataset via HATEMOD_DATASET"]
fn canonical_dataset_statistics() {
    let loaded = load_dataset(canonical_path()).unwrap();
    let ds = &loaded.dataset;
    assert_eq!(ds.len(), 24783);
    let d = ds.class_distribution();
    assert_eq!((d.get(Label::Hate), d.get(Label::Offensive), d.get(Label::Neither)), (1430, 19190, 4163));
    let stats = descriptive_stats(ds);
    let tl = stats.iter().find(|s| s.column == Column::TextLength).unwrap().stats;
    assert!((tl.mean - 14.12).abs() <= 0.01, "mean {}", tl.mean);
    assert!((tl.std - 6.83).abs() <= 0.01, "std {}", tl.std);
    assert_eq!((tl.q25, tl.median, tl.q75, tl.max), (9.0, 13.0, 19.0, 52.0));
    let class = stats.iter().find(|s| s.column == Column::Class).unwrap().stats;
    assert_eq!((class.median, class.max), (1.0, 2.0));
    let uniques = unique_counts(ds);
    let get = |name: &str| uniques.iter().find(|u| u.column == name).unwrap().unique;
    assert_eq!(get("tweet"), 24783);
    assert_eq!(get("class"), 3);
    assert_eq!(get("text_length"), 35);
}
