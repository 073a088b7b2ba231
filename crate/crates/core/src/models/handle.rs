use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};

use super::encoder::{EncoderConfig, PretrainedEncoder};
use super::net::Net;
use super::params::{shared_rng, ParamStore, TensorSource};
use super::{checkpoint, predict, Batch, Dropout, ModelSpec, Prediction};
use crate::error::{Error, Result};
use crate::textprep::{clean_text, TokenSequence, TokenizerAdapter};

/// How parameters are created.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Seed of the initialization stream.
    pub seed: u64,
    pub device: Device,
    /// Parameter dtype of baselines; encoder kinds always use `F32`.
    pub dtype: DType,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            device: Device::Cpu,
            dtype: DType::F32,
        }
    }
}

pub(crate) enum Sources {
    Fresh,
    Pretrained(PretrainedEncoder),
    /// Checkpoint tensors keyed by their stored names.
    Checkpoint(HashMap<String, Tensor>),
}

fn strip_group(tensors: &HashMap<String, Tensor>, group: &str) -> HashMap<String, Tensor> {
    let prefix = format!("{group}.");
    tensors
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), v.clone())))
        .collect()
}

/// A built network with its named parameters.
///
/// Parameters live under three groups: `model.` for baselines, `encoder.`
/// and `head.` for encoder kinds.
pub struct ModelHandle {
    spec: ModelSpec,
    encoder: Option<EncoderConfig>,
    params: ParamStore,
    net: Net,
    device: Device,
    dtype: DType,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("spec", &self.spec)
            .field("parameter_count", &self.parameter_count())
            .field("dtype", &self.dtype)
            .finish()
    }
}

/// Builds `spec` with freshly initialized parameters. Encoder kinds load
/// their encoder weights from the checkpoint named by `encoder_name`.
pub fn build_model(spec: &ModelSpec, opts: &BuildOptions) -> Result<ModelHandle> {
    spec.validate()?;
    if spec.kind.uses_encoder() {
        let name = spec.encoder_name.as_deref().expect("validated");
        let pretrained = PretrainedEncoder::open(name, &opts.device)?;
        let config = pretrained.config.clone();
        assemble(spec.clone(), Some(config), Sources::Pretrained(pretrained), opts)
    } else {
        assemble(spec.clone(), None, Sources::Fresh, opts)
    }
}

pub(crate) fn assemble(
    mut spec: ModelSpec,
    encoder: Option<EncoderConfig>,
    sources: Sources,
    opts: &BuildOptions,
) -> Result<ModelHandle> {
    let params = ParamStore::new();
    let rng = shared_rng(opts.seed);
    let device = opts.device.clone();
    let from_checkpoint = matches!(sources, Sources::Checkpoint(_));
    let wrap = |e: Error| {
        if from_checkpoint {
            Error::Checkpoint(format!("checkpoint does not match its spec: {e}"))
        } else {
            e
        }
    };

    let (net, dtype) = match &encoder {
        None => {
            let source = match &sources {
                Sources::Checkpoint(t) => Some(TensorSource::new(strip_group(t, "model"), true)),
                _ => None,
            };
            let vb = params.builder("model", source, rng, opts.dtype, &device);
            (Net::baseline(&spec, vb).map_err(wrap)?, opts.dtype)
        }
        Some(config) => {
            if spec.max_len > config.max_positions {
                return Err(Error::Spec(format!(
                    "max_len {} exceeds the encoder's {} positions",
                    spec.max_len, config.max_positions
                )));
            }
            spec.vocab_size = config.vocab_size;
            let (enc_src, head_src) = match &sources {
                Sources::Fresh => (None, None),
                Sources::Pretrained(p) => (
                    Some(TensorSource::new(p.tensors.clone(), true)),
                    Some(TensorSource::new(p.pooler_tensors(), false)),
                ),
                Sources::Checkpoint(t) => (
                    Some(TensorSource::new(strip_group(t, "encoder"), true)),
                    Some(TensorSource::new(strip_group(t, "head"), true)),
                ),
            };
            let dtype = DType::F32;
            let enc_vb = params.builder("encoder", enc_src, rng.clone(), dtype, &device);
            let head_vb = params.builder("head", head_src, rng, dtype, &device);
            (Net::encoder(&spec, config, enc_vb, head_vb).map_err(wrap)?, dtype)
        }
    };

    if let Sources::Checkpoint(tensors) = &sources {
        if tensors.len() != params.len() {
            let unused: Vec<&String> = tensors
                .keys()
                .filter(|k| params.get(k).is_none())
                .take(5)
                .collect();
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors but the spec uses {}; unexpected: {unused:?}",
                tensors.len(),
                params.len()
            )));
        }
    }

    Ok(ModelHandle {
        spec,
        encoder,
        params,
        net,
        device,
        dtype,
    })
}

impl ModelHandle {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Total number of parameter elements.
    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Variables updated by training: everything, or only the head when the
    /// encoder is frozen.
    pub fn trainable_vars(&self) -> Vec<Var> {
        if self.spec.freeze_encoder {
            self.params.vars_where(|name| !name.starts_with("encoder."))
        } else {
            self.params.vars_where(|_| true)
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub(crate) fn encoder_config_json(&self) -> Option<&str> {
        self.encoder.as_ref().map(|c| c.raw.as_str())
    }

    /// `(b, 3)` logits; dropout is active only when `dropout` is given.
    pub fn forward(&self, batch: &Batch, dropout: Option<&mut Dropout>) -> Result<Tensor> {
        self.net.forward(&self.spec, batch, dropout)
    }

    /// Evaluation-mode forward followed by softmax and argmax.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Prediction>> {
        predict(&self.forward(batch, None)?)
    }
}

/// A model plus the tokenizer that feeds it: raw text in, predictions out.
#[derive(Debug)]
pub struct Classifier {
    handle: ModelHandle,
    tokenizer: TokenizerAdapter,
}

/// Rows per forward pass during inference.
const INFERENCE_BATCH: usize = 64;

impl Classifier {
    pub fn new(handle: ModelHandle, tokenizer: TokenizerAdapter) -> Result<Self> {
        if tokenizer.vocab_size() > handle.spec.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} entries but the model embeds only {}",
                tokenizer.vocab_size(),
                handle.spec.vocab_size
            )));
        }
        Ok(Self { handle, tokenizer })
    }

    /// Encoder kinds with fresh heads, using the encoder's own tokenizer.
    pub fn from_pretrained(spec: &ModelSpec, opts: &BuildOptions) -> Result<Self> {
        spec.validate()?;
        let name = spec
            .encoder_name
            .as_deref()
            .ok_or_else(|| Error::Spec("from_pretrained needs an encoder kind".into()))?;
        let pretrained = PretrainedEncoder::open(name, &opts.device)?;
        let tokenizer = pretrained.tokenizer.clone();
        let config = pretrained.config.clone();
        let handle = assemble(spec.clone(), Some(config), Sources::Pretrained(pretrained), opts)?;
        Self::new(handle, tokenizer)
    }

    pub fn handle(&self) -> &ModelHandle {
        &self.handle
    }

    pub fn tokenizer(&self) -> &TokenizerAdapter {
        &self.tokenizer
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.handle.spec
    }

    /// Cleans and tokenizes raw texts to the model's `max_len`.
    pub fn encode<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<TokenSequence>> {
        texts
            .iter()
            .map(|t| {
                self.tokenizer
                    .tokenize(&clean_text(t.as_ref()), self.handle.spec.max_len)
            })
            .collect()
    }

    /// Evaluation-mode logits for raw texts, `(n, 3)`.
    pub fn logits<S: AsRef<str>>(&self, texts: &[S]) -> Result<Tensor> {
        let seqs = self.encode(texts)?;
        let parts = seqs
            .chunks(INFERENCE_BATCH)
            .map(|chunk| {
                let batch = Batch::new(chunk, &self.handle.device)?;
                self.handle.forward(&batch, None)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 0)?)
    }

    pub fn classify<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Prediction>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        predict(&self.logits(texts)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(&self.handle, &self.tokenizer, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let (handle, tokenizer) = checkpoint::load(path.as_ref(), device)?;
        Self::new(handle, tokenizer)
    }
}
