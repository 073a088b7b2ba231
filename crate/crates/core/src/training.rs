//! Training loop: weighted cross-entropy, AdamW, global-norm clipping and
//! best-on-validation checkpointing, with per-epoch learning curves.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{class_weights, Dataset, Label, Splits, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::models::{predict, Batch, BuildOptions, Classifier, ModelKind, ModelSpec, Preset};
use crate::textprep::{clean_text, TokenSequence, TokenizerAdapter};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Rows per forward pass when evaluating.
const EVAL_BATCH: usize = 64;

/// Optimizer hyperparameters besides learning rate and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay.
    Adamw { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adamw {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub use_class_weights: bool,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            grad_clip_norm: Some(1.0),
            use_class_weights: false,
            seed: 42,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults with the learning rate suited to `kind`: 2e-5 when a
    /// pretrained encoder is fine-tuned, 1e-3 otherwise.
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            learning_rate: if kind.uses_encoder() { 2e-5 } else { 1e-3 },
            ..Self::default()
        }
    }

    pub fn for_preset(preset: &Preset) -> Self {
        Self {
            use_class_weights: preset.use_class_weights,
            grad_clip_norm: preset.grad_clip_norm,
            ..Self::for_kind(preset.spec.kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Where the best model is written. The monitored metric is always the
/// validation loss, minimized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub path: Option<PathBuf>,
}

impl CheckpointPolicy {
    pub const METRIC: &'static str = "val_loss";

    pub fn to_file(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Whether this epoch set a new best validation loss.
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurves {
    pub records: Vec<EpochRecord>,
}

impl LearningCurves {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The record with the lowest validation loss (earliest on ties).
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_loss <= r.val_loss => Some(b),
                _ => Some(r),
            })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per epoch, ready for plotting.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::InvalidData(format!("curves csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidData(format!("curves csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

/// Mean of `weights[label] * -log softmax(logits)[label]` over the batch,
/// normalized by the sum of the weights used.
pub fn weighted_cross_entropy(
    logits: &Tensor,
    labels: &[Label],
    weights: &[f64; NUM_CLASSES],
) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    if b != labels.len() || c != NUM_CLASSES {
        return Err(Error::InvalidData(format!(
            "logits {:?} do not match {} labels",
            logits.dims(),
            labels.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidData(format!("class weights must be positive: {weights:?}")));
    }
    let device = logits.device();
    let dtype = logits.dtype();
    let idx: Vec<u32> = labels.iter().map(|l| l.index() as u32).collect();
    let idx = Tensor::from_vec(idx, (b, 1), device)?;
    let log_probs = candle_nn::ops::log_softmax(logits, 1)?;
    let nll = log_probs.gather(&idx, 1)?.squeeze(1)?.neg()?;
    let w: Vec<f64> = labels.iter().map(|l| weights[l.index()]).collect();
    let total: f64 = w.iter().sum();
    let w = Tensor::from_vec(w, b, device)?.to_dtype(dtype)?;
    Ok((nll.mul(&w)?.sum_all()? / total)?)
}

/// Global gradient norm before and after clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradNorms {
    pub before: f64,
    pub after: f64,
}

fn global_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut sq = 0.0;
    for var in vars {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    Ok(sq.sqrt())
}

/// Scales all gradients of `vars` by a common factor so their global L2
/// norm is at most `max_norm`.
pub fn clip_gradients(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<GradNorms> {
    let before = global_norm(grads, vars)?;
    if before <= max_norm || before == 0.0 {
        return Ok(GradNorms {
            before,
            after: before,
        });
    }
    let scale = max_norm / before;
    for var in vars {
        if let Some(g) = grads.remove(var.as_tensor()) {
            grads.insert(var.as_tensor(), g.affine(scale, 0.0)?);
        }
    }
    let after = global_norm(grads, vars)?;
    Ok(GradNorms { before, after })
}

/// Tokenized rows of one split.
#[derive(Debug, Clone)]
pub struct Examples {
    pub row_ids: Vec<i64>,
    pub seqs: Vec<TokenSequence>,
    pub labels: Vec<Label>,
}

impl Examples {
    pub fn encode(classifier: &Classifier, ds: &Dataset) -> Result<Self> {
        let texts: Vec<&str> = ds.rows().iter().map(|r| r.text.as_str()).collect();
        Ok(Self {
            row_ids: ds.row_ids(),
            seqs: classifier.encode(&texts)?,
            labels: ds.labels(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, idx: &[usize], device: &Device) -> Result<(Batch, Vec<Label>)> {
        let seqs: Vec<TokenSequence> = idx.iter().map(|&i| self.seqs[i].clone()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((Batch::new(&seqs, device)?, labels))
    }
}

/// Builds an untrained classifier for `spec`. Baselines get a WordPiece
/// vocabulary of at most `spec.vocab_size` entries learned from the cleaned
/// training texts, and an embedding table sized to it. Encoder kinds reuse
/// the encoder's own tokenizer.
pub fn prepare_classifier(spec: &ModelSpec, train: &Dataset, opts: &BuildOptions) -> Result<Classifier> {
    spec.validate()?;
    if spec.kind.uses_encoder() {
        return Classifier::from_pretrained(spec, opts);
    }
    let texts: Vec<String> = train
        .rows()
        .iter()
        .map(|r| clean_text(&r.text).into_string())
        .collect();
    let tokenizer = TokenizerAdapter::train_wordpiece(texts, spec.vocab_size)?;
    let spec = ModelSpec {
        vocab_size: tokenizer.vocab_size(),
        ..spec.clone()
    };
    let handle = crate::models::build_model(&spec, opts)?;
    Classifier::new(handle, tokenizer)
}

/// Loss and accuracy of an evaluation-mode pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassSummary {
    /// Unweighted mean cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
}

fn eval_pass(classifier: &Classifier, data: &Examples) -> Result<(PassSummary, Vec<Label>)> {
    let handle = classifier.handle();
    let uniform = [1.0; NUM_CLASSES];
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(EVAL_BATCH) {
        let (batch, labels) = data.batch(chunk, handle.device())?;
        let logits = handle.forward(&batch, None)?;
        let loss = weighted_cross_entropy(&logits, &labels, &uniform)?
            .to_dtype(DType::F64)?
            .to_scalar::<f64>()?;
        loss_sum += loss * chunk.len() as f64;
        preds.extend(predict(&logits)?.into_iter().map(|p| p.label));
    }
    let correct = preds.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    let n = data.len().max(1) as f64;
    Ok((
        PassSummary {
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        },
        preds,
    ))
}

/// Metrics of `classifier` on `ds`; the report's loss is the unweighted mean
/// cross-entropy.
pub fn evaluate_model(classifier: &Classifier, ds: &Dataset) -> Result<EvalReport> {
    let data = Examples::encode(classifier, ds)?;
    let (summary, preds) = eval_pass(classifier, &data)?;
    EvalReport::from_predictions(&preds, &data.labels, summary.loss)
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The model restored to its best validation epoch.
    pub classifier: Classifier,
    pub curves: LearningCurves,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub class_weights: [f64; NUM_CLASSES],
}

/// Trains `classifier` on `splits.train`, validating after every epoch.
/// Returns the parameters of the epoch with the lowest validation loss,
/// which are also written to `policy.path` whenever they improve.
pub fn train(
    classifier: Classifier,
    splits: &Splits,
    config: &TrainConfig,
    policy: &CheckpointPolicy,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_data = Examples::encode(&classifier, &splits.train)?;
    let val_data = Examples::encode(&classifier, &splits.val)?;
    let weights = if config.use_class_weights {
        class_weights(splits.train.class_distribution())?
    } else {
        [1.0; NUM_CLASSES]
    };
    fit(classifier, &train_data, &val_data, weights, config, policy)
}

/// The loop behind [`train`], on pre-tokenized data.
pub fn fit(
    classifier: Classifier,
    train_data: &Examples,
    val_data: &Examples,
    weights: [f64; NUM_CLASSES],
    config: &TrainConfig,
    policy: &CheckpointPolicy,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::InvalidData("training and validation data must be non-empty".into()));
    }
    let handle = classifier.handle();
    let device = handle.device().clone();
    let vars = handle.trainable_vars();
    let OptimizerKind::Adamw { beta1, beta2, eps } = config.optimizer;
    let mut optimizer = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: config.learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay: config.weight_decay,
        },
    )?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout = crate::models::Dropout::new(handle.spec().dropout, config.seed ^ 0x5eed);

    let mut curves = LearningCurves::default();
    let mut best: Option<(usize, f64, BTreeMap<String, Tensor>)> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let (batch, labels) = train_data.batch(chunk, &device)?;
            let logits = handle.forward(&batch, Some(&mut dropout))?;
            let loss = weighted_cross_entropy(&logits, &labels, &weights)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    loss: value,
                    batch_rows: chunk.iter().map(|&i| train_data.row_ids[i]).collect(),
                    history: history.iter().rev().take(20).rev().copied().collect(),
                });
            }
            history.push(value);
            loss_sum += value * chunk.len() as f64;
            correct += predict(&logits)?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p.label == **l)
                .count();
            let mut grads = loss.backward()?;
            if let Some(max_norm) = config.grad_clip_norm {
                clip_gradients(&mut grads, &vars, max_norm)?;
            }
            optimizer.step(&grads)?;
        }
        let (val, _) = eval_pass(&classifier, val_data)?;
        let improved = best.as_ref().is_none_or(|(_, loss, _)| val.loss < *loss);
        if improved {
            best = Some((epoch, val.loss, handle.params().tensors()?));
            if let Some(path) = &policy.path {
                classifier.save(path)?;
            }
        }
        let n = train_data.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            improved,
        };
        tracing::info!(
            epoch,
            train_loss = record.train_loss,
            train_accuracy = record.train_accuracy,
            val_loss = record.val_loss,
            val_accuracy = record.val_accuracy,
            improved,
            "epoch finished"
        );
        curves.records.push(record);
    }

    let (best_epoch, best_val_loss, snapshot) = best.expect("at least one epoch");
    handle.params().restore(&snapshot)?;
    Ok(TrainOutcome {
        classifier,
        curves,
        best_epoch,
        best_val_loss,
        class_weights: weights,
    })
}

/// Everything needed to audit a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub model_name: String,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub split_manifest_sha256: String,
    pub dataset_sha256: String,
    pub class_weights: [f64; NUM_CLASSES],
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint: Option<PathBuf>,
    pub curves: LearningCurves,
    pub test_report: Option<EvalReport>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(rows: &[[f64; 3]]) -> Tensor {
        Tensor::from_vec(rows.concat(), (rows.len(), 3), &Device::Cpu).unwrap()
    }

    fn scalar(x: &Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let loss = weighted_cross_entropy(
            &t(&[[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]),
            &[Label::Hate, Label::Neither],
            &[1.0; 3],
        )
        .unwrap();
        assert_relative_eq!(scalar(&loss), 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_tiny_loss() {
        let loss = weighted_cross_entropy(
            &t(&[[30.0, 0.0, 0.0]]),
            &[Label::Hate],
            &[5.0, 0.1, 2.0],
        )
        .unwrap();
        assert!(scalar(&loss) < 1e-4);
    }

    #[test]
    fn weighted_mean_matches_hand_computation() {
        // Row 0: logits (1, 0, 0), label 0, weight 2.
        // Row 1: logits (0, 2, 0), label 2, weight 1.
        let e = std::f64::consts::E;
        let nll0 = -(e / (e + 2.0)).ln();
        let e2 = e * e;
        let nll1 = -(1.0 / (e2 + 2.0)).ln();
        let expected = (2.0 * nll0 + 1.0 * nll1) / 3.0;
        let loss = weighted_cross_entropy(
            &t(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]),
            &[Label::Hate, Label::Neither],
            &[2.0, 7.0, 1.0],
        )
        .unwrap();
        assert_relative_eq!(scalar(&loss), expected, epsilon = 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let logits = t(&[[0.0, 0.0, 0.0]]);
        assert!(weighted_cross_entropy(&logits, &[], &[1.0; 3]).is_err());
        assert!(weighted_cross_entropy(&logits, &[Label::Hate], &[1.0, 0.0, 1.0]).is_err());
    }

    fn grads_for(values: &[f64]) -> (GradStore, Vec<Var>) {
        let var = Var::new(values, &Device::Cpu).unwrap();
        // d/dv of sum(v * c) is c, so the gradient equals `values`.
        let c = Tensor::new(values, &Device::Cpu).unwrap();
        let grads = var.as_tensor().mul(&c).unwrap().sum_all().unwrap().backward().unwrap();
        (grads, vec![var])
    }

    #[test]
    fn clipping_scales_large_gradients() {
        let (mut grads, vars) = grads_for(&[6.0, 8.0]);
        let norms = clip_gradients(&mut grads, &vars, 1.0).unwrap();
        assert_relative_eq!(norms.before, 10.0, epsilon = 1e-12);
        assert_relative_eq!(norms.after, 1.0, epsilon = 1e-12);
        let g: Vec<f64> = grads.get(vars[0].as_tensor()).unwrap().to_vec1().unwrap();
        assert_relative_eq!(g[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(g[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn clipping_leaves_small_gradients() {
        let (mut grads, vars) = grads_for(&[0.3, 0.4]);
        let norms = clip_gradients(&mut grads, &vars, 1.0).unwrap();
        assert_eq!(norms.before, norms.after);
        let g: Vec<f64> = grads.get(vars[0].as_tensor()).unwrap().to_vec1().unwrap();
        assert_eq!(g, vec![0.3, 0.4]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { grad_clip_norm: Some(0.0), ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert_eq!(TrainConfig::for_kind(ModelKind::EncoderCnn).learning_rate, 2e-5);
        assert_eq!(TrainConfig::for_kind(ModelKind::Lstm).learning_rate, 1e-3);
    }

    #[test]
    fn presets_map_to_configs() {
        let p = crate::models::preset("UPDATED BERT+CNN").unwrap();
        let c = TrainConfig::for_preset(&p);
        assert!(c.use_class_weights);
        assert_eq!(c.grad_clip_norm, Some(1.0));
        let p = crate::models::preset("BERT+CNN").unwrap();
        assert_eq!(TrainConfig::for_preset(&p).grad_clip_norm, None);
    }

    #[test]
    fn curves_best_and_csv() {
        let rec = |epoch, val_loss| EpochRecord {
            epoch,
            train_loss: 1.0,
            train_accuracy: 0.5,
            val_loss,
            val_accuracy: 0.5,
            improved: false,
        };
        let curves = LearningCurves {
            records: vec![rec(1, 0.9), rec(2, 0.4), rec(3, 0.4), rec(4, 0.7)],
        };
        assert_eq!(curves.best().unwrap().epoch, 2);
        let csv = curves.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_loss,train_accuracy,val_loss,val_accuracy,improved"
        );
        assert_eq!(lines.count(), 4);
    }
}
