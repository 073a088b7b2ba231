//! Fixtures shared by the interface tests. The frozen model, the sentence
//! fixture and the synthetic text generator live with the core crate.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hatemod_core::corpus::Label;

#[path = "../../../core/tests/common/mod.rs"]
pub mod common;

pub fn core_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn frozen_checkpoint() -> PathBuf {
    core_fixtures().join("moderation/frozen_cnn.safetensors")
}

pub struct Sentence {
    pub text: String,
    pub gold: Label,
    pub predicted: Label,
    pub probabilities: [f64; 3],
}

/// The 200 labeled sentences with the frozen model's golden outputs.
pub fn sentences() -> Vec<Sentence> {
    let path = core_fixtures().join("moderation/sentences.tsv");
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let label = |i: usize| Label::from_index(rec[i].parse().unwrap()).unwrap();
            Sentence {
                text: rec[0].to_string(),
                gold: label(1),
                predicted: label(2),
                probabilities: [3, 4, 5].map(|i| rec[i].parse().unwrap()),
            }
        })
        .collect()
}

/// Writes a corpus CSV in the released column layout.
pub fn write_corpus(path: &Path, rows: &[(String, usize)]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["", "count", "hate_speech", "offensive_language", "neither", "class", "tweet"])
        .unwrap();
    for (i, (text, class)) in rows.iter().enumerate() {
        let mut votes = [0; 3];
        votes[*class] = 3;
        w.write_record([
            i.to_string(),
            "3".into(),
            votes[0].to_string(),
            votes[1].to_string(),
            votes[2].to_string(),
            class.to_string(),
            text.clone(),
        ])
        .unwrap();
    }
    w.flush().unwrap();
}
