//! The ten classifier architectures: embedding baselines (CNN, LSTM,
//! BiLSTM), pretrained-encoder classifiers and encoder hybrids.
//!
//! Every forward pass takes a [`Batch`] of fixed-length token sequences and
//! returns `(batch, 3)` logits. Padding embeds to the zero vector and is
//! excluded from pooling and from final-state selection, so appending
//! padding never changes a prediction.

mod checkpoint;
mod encoder;
mod handle;
mod layers;
mod net;
pub mod params;
mod presets;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

pub use checkpoint::{CHECKPOINT_FORMAT_VERSION, ENCODER_DIR_ENV};
pub use encoder::{write_tiny_encoder, EncoderArch, TinyEncoder};
pub use handle::{build_model, BuildOptions, Classifier, ModelHandle};
pub use layers::{final_state, masked_max_over_time, reverse_prefix, LstmStack};
pub use presets::{preset, preset_names, Preset, PRESET_NAMES};

/// Architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    Lstm,
    Bilstm,
    Encoder,
    EncoderCnn,
    EncoderBilstm,
}

impl ModelKind {
    pub fn uses_encoder(self) -> bool {
        matches!(
            self,
            ModelKind::Encoder | ModelKind::EncoderCnn | ModelKind::EncoderBilstm
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
            ModelKind::Bilstm => "bilstm",
            ModelKind::Encoder => "encoder",
            ModelKind::EncoderCnn => "encoder_cnn",
            ModelKind::EncoderBilstm => "encoder_bilstm",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cnn" => ModelKind::Cnn,
            "lstm" => ModelKind::Lstm,
            "bilstm" => ModelKind::Bilstm,
            "encoder" => ModelKind::Encoder,
            "encoder_cnn" => ModelKind::EncoderCnn,
            "encoder_bilstm" => ModelKind::EncoderBilstm,
            other => return Err(Error::Spec(format!("unknown model kind `{other}`"))),
        })
    }
}

/// Architecture hyperparameters. Serialized as the `[model]` table of a
/// config file and embedded in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Pretrained checkpoint directory or name, for encoder kinds only.
    pub encoder_name: Option<String>,
    /// Embedding rows for baselines; taken from the encoder for encoder kinds.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub conv_filters: usize,
    pub kernel_sizes: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub max_len: usize,
    /// Train only the head of encoder kinds.
    pub freeze_encoder: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Cnn,
            encoder_name: None,
            vocab_size: 8000,
            embed_dim: 128,
            conv_filters: 100,
            kernel_sizes: vec![3, 4, 5],
            lstm_hidden: 128,
            lstm_layers: 1,
            dropout: 0.1,
            num_classes: NUM_CLASSES,
            max_len: 64,
            freeze_encoder: false,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Spec(msg));
        if self.num_classes != NUM_CLASSES {
            return fail(format!("num_classes must be 3, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.max_len < 2 {
            return fail(format!("max_len must be at least 2, got {}", self.max_len));
        }
        match (self.kind.uses_encoder(), &self.encoder_name) {
            (true, None) => return fail(format!("kind {} needs encoder_name", self.kind.as_str())),
            (false, Some(_)) => {
                return fail(format!(
                    "kind {} does not take encoder_name",
                    self.kind.as_str()
                ))
            }
            _ => {}
        }
        if !self.kind.uses_encoder() && (self.vocab_size == 0 || self.embed_dim == 0) {
            return fail("vocab_size and embed_dim must be positive".into());
        }
        if matches!(self.kind, ModelKind::Cnn | ModelKind::EncoderCnn) {
            if self.kernel_sizes.is_empty() || self.conv_filters == 0 {
                return fail("convolutional kinds need kernel_sizes and conv_filters".into());
            }
            if let Some(&k) = self
                .kernel_sizes
                .iter()
                .find(|&&k| k == 0 || k > self.max_len)
            {
                return fail(format!("kernel size {k} must be in 1..={}", self.max_len));
            }
        }
        if matches!(
            self.kind,
            ModelKind::Lstm | ModelKind::Bilstm | ModelKind::EncoderBilstm
        ) && (self.lstm_hidden == 0 || self.lstm_layers == 0)
        {
            return fail("recurrent kinds need lstm_hidden and lstm_layers".into());
        }
        Ok(())
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(1)
    }
}

/// Token ids and masks of several sequences, ready for a forward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(batch, len)` token ids, `u32`.
    pub ids: Tensor,
    /// `(batch, len)` attention mask, `u32`, 1 for real tokens.
    pub mask: Tensor,
    /// Number of real tokens per row.
    pub lengths: Vec<usize>,
}

impl Batch {
    /// Stacks sequences of equal padded length. Masks must be a run of ones
    /// followed by zeros. Rows without real tokens are accepted by the
    /// baselines (they see only zero vectors) and rejected by encoder kinds.
    pub fn new(seqs: &[TokenSequence], device: &Device) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::InvalidData("empty batch".into()))?;
        let len = first.len();
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        let mut lengths = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if seq.len() != len || seq.attention_mask.len() != len {
                return Err(Error::InvalidData(format!(
                    "batch mixes sequence lengths {len} and {}",
                    seq.len()
                )));
            }
            let real = seq.real_len();
            if seq.attention_mask[..real].iter().any(|&m| m != 1) {
                return Err(Error::InvalidData(
                    "attention masks must be a prefix of ones".into(),
                ));
            }
            ids.extend_from_slice(&seq.ids);
            mask.extend_from_slice(&seq.attention_mask);
            lengths.push(real);
        }
        let shape = (seqs.len(), len);
        Ok(Self {
            ids: Tensor::from_vec(ids, shape, device)?,
            mask: Tensor::from_vec(mask, shape, device)?,
            lengths,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn padded_len(&self) -> usize {
        self.ids.dim(1).unwrap_or(0)
    }

    /// Keeps the first `len` positions of every row, or pads with masked
    /// zeros when `len` exceeds the padded length.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        let current = self.padded_len();
        if len > current {
            let pad = Tensor::zeros((self.size(), len - current), DType::U32, self.ids.device())?;
            return Ok(Self {
                ids: Tensor::cat(&[&self.ids, &pad], 1)?,
                mask: Tensor::cat(&[&self.mask, &pad], 1)?,
                lengths: self.lengths.clone(),
            });
        }
        Ok(Self {
            ids: self.ids.narrow(1, 0, len)?,
            mask: self.mask.narrow(1, 0, len)?,
            lengths: self.lengths.clone(),
        })
    }

    pub fn max_length(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }
}

/// Seeded inverted dropout used during training. Evaluation passes simply
/// omit it.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_rate(&self, p: f64) -> Self {
        Self {
            p,
            rng: self.rng.clone(),
        }
    }

    pub fn apply(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply_rate(x, self.p)
    }

    /// Zeroes each element with probability `p` and rescales survivors.
    pub fn apply_rate(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<f64> = (0..x.elem_count())
            .map(|_| {
                if self.rng.random::<f64>() < p {
                    0.0
                } else {
                    scale
                }
            })
            .collect();
        let mask = Tensor::from_vec(keep, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

/// Label and class probabilities for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub probabilities: [f64; NUM_CLASSES],
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax over each row of `(batch, 3)` logits, then argmax.
pub fn predict(logits: &Tensor) -> Result<Vec<Prediction>> {
    let rows: Vec<Vec<f64>> = logits.to_dtype(DType::F64)?.to_vec2()?;
    rows.iter()
        .map(|row| {
            if row.len() != NUM_CLASSES || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("invalid logits row {row:?}")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            let probabilities = [exp[0] / sum, exp[1] / sum, exp[2] / sum];
            let label = Label::from_index(argmax(row)).expect("three classes");
            Ok(Prediction {
                label,
                probabilities,
            })
        })
        .collect()
}
