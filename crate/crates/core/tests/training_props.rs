//! Training contracts on small synthetic tasks.

mod common;

use candle_core::{DType, Device, Tensor, Var};
use hatemod_core::corpus::{Dataset, Label, Splits};
use hatemod_core::models::{BuildOptions, Classifier, ModelKind, ModelSpec};
use hatemod_core::training::{
    clip_gradients, evaluate_model, prepare_classifier, train, CheckpointPolicy, TrainConfig,
    TrainOutcome,
};
use hatemod_core::Error;
use proptest::prelude::*;

fn spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        kind,
        vocab_size: 200,
        embed_dim: 16,
        conv_filters: 8,
        kernel_sizes: vec![2, 3],
        lstm_hidden: 12,
        dropout: 0.0,
        max_len: 16,
        ..ModelSpec::default()
    }
}

fn splits(train: &[(String, usize)], val: &[(String, usize)]) -> Splits {
    Splits {
        train: common::dataset(train, 0),
        val: common::dataset(val, 100_000),
        test: common::dataset(val, 200_000),
    }
}

fn run(kind: ModelKind, s: &Splits, config: &TrainConfig, policy: &CheckpointPolicy) -> TrainOutcome {
    let opts = BuildOptions {
        seed: config.seed,
        ..BuildOptions::default()
    };
    let clf = prepare_classifier(&spec(kind), &s.train, &opts).unwrap();
    train(clf, s, config, policy).unwrap()
}

fn train_accuracy(clf: &Classifier, ds: &Dataset) -> f64 {
    evaluate_model(clf, ds).unwrap().accuracy
}

#[test]
fn small_models_overfit_32_examples() {
    let data = common::synthetic_texts(32, 5);
    let s = splits(&data, &common::synthetic_texts(12, 6));
    for kind in [ModelKind::Cnn, ModelKind::Lstm, ModelKind::Bilstm] {
        let config = TrainConfig {
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TrainConfig::for_kind(kind)
        };
        let out = run(kind, &s, &config, &CheckpointPolicy::default());
        let first = out.curves.records.first().unwrap().train_loss;
        let last = out.curves.records.last().unwrap().train_loss;
        assert!(last < first, "{kind:?}: loss {first} -> {last}");
        let best_train_acc = out
            .curves
            .records
            .iter()
            .map(|r| r.train_accuracy)
            .fold(0.0, f64::max);
        assert_eq!(best_train_acc, 1.0, "{kind:?} never fit the training set");
        assert_eq!(train_accuracy(&out.classifier, &s.train), 1.0, "{kind:?}");
    }
}

#[test]
fn same_seed_gives_identical_curves() {
    let s = splits(&common::synthetic_texts(60, 1), &common::synthetic_texts(21, 2));
    for kind in [ModelKind::Cnn, ModelKind::Bilstm] {
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 17,
            ..TrainConfig::for_kind(kind)
        };
        let a = run(kind, &s, &config, &CheckpointPolicy::default());
        let b = run(kind, &s, &config, &CheckpointPolicy::default());
        assert_eq!(a.curves, b.curves, "{kind:?}");
        assert_eq!(a.curves.len(), config.epochs);
        let other = run(
            kind,
            &s,
            &TrainConfig {
                seed: 18,
                ..config.clone()
            },
            &CheckpointPolicy::default(),
        );
        assert_ne!(a.curves, other.curves, "{kind:?} ignores the seed");
    }
}

/// Validation labels that contradict the training labels make validation
/// loss rise as training proceeds, so the best epoch is not the last.
#[test]
fn checkpoint_holds_the_min_validation_loss_epoch() {
    let train_rows = common::synthetic_texts(48, 3);
    let val_rows: Vec<(String, usize)> = common::synthetic_texts(24, 4)
        .into_iter()
        .enumerate()
        .map(|(i, (t, c))| (t, if i % 2 == 0 { (c + 1) % 3 } else { c }))
        .collect();
    let s = splits(&train_rows, &val_rows);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.safetensors");
    let config = TrainConfig {
        epochs: 8,
        batch_size: 8,
        learning_rate: 1e-2,
        ..TrainConfig::for_kind(ModelKind::Cnn)
    };
    let out = run(ModelKind::Cnn, &s, &config, &CheckpointPolicy::to_file(&path));
    let losses: Vec<f64> = out.curves.records.iter().map(|r| r.val_loss).collect();
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, min);
    assert_eq!(out.curves.best().unwrap().epoch, out.best_epoch);
    assert!(out.best_epoch < config.epochs, "fixture should peak early: {losses:?}");

    let returned = evaluate_model(&out.classifier, &s.val).unwrap().mean_loss;
    let stored = Classifier::load(&path, &Device::Cpu).unwrap();
    let reloaded = evaluate_model(&stored, &s.val).unwrap().mean_loss;
    assert!((returned - min).abs() < 1e-6, "{returned} vs {min}");
    assert!((reloaded - min).abs() < 1e-6, "{reloaded} vs {min}");
    // Improvement flags mark exactly the running minima.
    let mut running = f64::INFINITY;
    for r in &out.curves.records {
        assert_eq!(r.improved, r.val_loss < running);
        running = running.min(r.val_loss);
    }
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let s = splits(&common::synthetic_texts(16, 1), &common::synthetic_texts(6, 2));
    let opts = BuildOptions::default();
    let clf = prepare_classifier(&spec(ModelKind::Cnn), &s.train, &opts).unwrap();
    let var = clf.handle().params().get("model.classifier.bias").unwrap();
    var.set(&Tensor::new(&[f32::NAN, 0.0, 0.0], &Device::Cpu).unwrap()).unwrap();
    let config = TrainConfig {
        batch_size: 4,
        ..TrainConfig::default()
    };
    match train(clf, &s, &config, &CheckpointPolicy::default()) {
        Err(Error::NonFiniteLoss {
            epoch,
            step,
            batch_rows,
            ..
        }) => {
            assert_eq!((epoch, step), (1, 0));
            assert_eq!(batch_rows.len(), 4);
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

/// A 9:1 task where the minority class shares most of its words with the
/// majority: "Hate" rows carry one marker word among neutral words, and
/// some majority rows carry the marker too.
fn imbalanced(n: usize, seed: u64) -> Vec<(String, usize)> {
    let base = common::synthetic_texts(n, seed);
    base.into_iter()
        .enumerate()
        .map(|(i, (text, _))| {
            let neutral: Vec<&str> = text
                .split(' ')
                .filter(|w| common::NEUTRAL.contains(w))
                .collect();
            let mut words = if neutral.is_empty() { vec!["today"] } else { neutral };
            let class = match i % 20 {
                0 | 10 => 0,
                5 => 1,
                _ => 2,
            };
            match class {
                0 => words.insert(i % words.len(), "zorbl"),
                1 => words.insert(0, "vexlor"),
                _ if i % 7 == 0 => words.push("zorbl"),
                _ => {}
            }
            (words.join(" "), class)
        })
        .collect()
}

#[test]
fn class_weights_do_not_reduce_minority_recall() {
    let s = Splits {
        train: common::dataset(&imbalanced(400, 11), 0),
        val: common::dataset(&imbalanced(100, 12), 10_000),
        test: common::dataset(&imbalanced(300, 13), 20_000),
    };
    let mut plain = Vec::new();
    let mut weighted = Vec::new();
    for seed in 0..5 {
        for (use_class_weights, out) in [(false, &mut plain), (true, &mut weighted)] {
            let config = TrainConfig {
                epochs: 2,
                batch_size: 16,
                seed,
                use_class_weights,
                ..TrainConfig::for_kind(ModelKind::Cnn)
            };
            let o = run(ModelKind::Cnn, &s, &config, &CheckpointPolicy::default());
            let report = evaluate_model(&o.classifier, &s.test).unwrap();
            out.push(report.per_class[Label::Hate.index()].recall);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&weighted) >= mean(&plain),
        "weighted {weighted:?} vs plain {plain:?}"
    );
}

fn norm(values: &[Vec<f64>]) -> f64 {
    values.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clipping_bounds_the_global_norm(
        grads in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..8), 1..5),
        max_norm in 0.01f64..20.0,
    ) {
        let vars: Vec<Var> = grads
            .iter()
            .map(|g| Var::new(vec![0.0f64; g.len()].as_slice(), &Device::Cpu).unwrap())
            .collect();
        // loss = sum_k <v_k, g_k>, so dloss/dv_k = g_k.
        let mut loss = Tensor::new(0.0f64, &Device::Cpu).unwrap();
        for (v, g) in vars.iter().zip(&grads) {
            let g = Tensor::new(g.as_slice(), &Device::Cpu).unwrap();
            loss = (loss + v.as_tensor().mul(&g).unwrap().sum_all().unwrap()).unwrap();
        }
        let mut store = loss.backward().unwrap();
        let norms = clip_gradients(&mut store, &vars, max_norm).unwrap();
        let clipped: Vec<Vec<f64>> = vars
            .iter()
            .map(|v| store.get(v.as_tensor()).unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap())
            .collect();
        let pre = norm(&grads);
        let post = norm(&clipped);
        prop_assert!((norms.before - pre).abs() < 1e-9 * pre.max(1.0));
        prop_assert!((post - pre.min(max_norm)).abs() < 1e-6);
        prop_assert!((norms.after - post).abs() < 1e-6);
        // Direction preserved: every component scaled by the same factor.
        let scale = post / pre;
        for (g, c) in grads.iter().flatten().zip(clipped.iter().flatten()) {
            prop_assert!((g * scale - c).abs() < 1e-9 * g.abs().max(1.0));
        }
    }
}
