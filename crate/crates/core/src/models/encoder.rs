//! Pretrained transformer encoders (BERT and DistilBERT layouts).
//!
//! An encoder directory holds `config.json`, `model.safetensors` and a
//! `tokenizer.json` or `vocab.txt`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_transformers::models::{bert, distilbert};
use serde::{Deserialize, Serialize};

use super::params::{shared_rng, ParamStore};
use crate::error::{Error, Result};
use crate::textprep::TokenizerAdapter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderArch {
    Bert,
    DistilBert,
}

impl EncoderArch {
    fn prefix(self) -> &'static str {
        match self {
            EncoderArch::Bert => "bert.",
            EncoderArch::DistilBert => "distilbert.",
        }
    }
}

/// Parsed `config.json` plus the raw text, which is what checkpoints embed.
#[derive(Debug, Clone)]
pub(crate) struct EncoderConfig {
    pub arch: EncoderArch,
    pub raw: String,
    pub hidden: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl EncoderConfig {
    pub fn from_json(raw: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(raw)?;
        let field = |name: &str| value.get(name).and_then(|v| v.as_u64()).map(|v| v as usize);
        let model_type = value.get("model_type").and_then(|v| v.as_str());
        let arch = match model_type {
            Some("distilbert") => EncoderArch::DistilBert,
            Some("bert") | None if value.get("hidden_size").is_some() => EncoderArch::Bert,
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported encoder model_type {other:?}"
                )))
            }
        };
        let hidden = match arch {
            EncoderArch::Bert => field("hidden_size"),
            EncoderArch::DistilBert => field("dim"),
        };
        let (Some(hidden), Some(vocab_size), Some(max_positions)) = (
            hidden,
            field("vocab_size"),
            field("max_position_embeddings"),
        ) else {
            return Err(Error::Checkpoint(
                "encoder config lacks hidden size, vocab_size or max_position_embeddings".into(),
            ));
        };
        // Parse once with the full schema so errors surface at load time.
        match arch {
            EncoderArch::Bert => {
                serde_json::from_str::<bert::Config>(raw)
                    .map_err(|e| Error::Checkpoint(format!("encoder config: {e}")))?;
            }
            EncoderArch::DistilBert => {
                serde_json::from_str::<distilbert::Config>(raw)
                    .map_err(|e| Error::Checkpoint(format!("encoder config: {e}")))?;
            }
        }
        Ok(Self {
            arch,
            raw: raw.to_string(),
            hidden,
            vocab_size,
            max_positions,
        })
    }
}

pub(crate) enum Backbone {
    Bert(bert::BertModel),
    DistilBert(distilbert::DistilBertModel),
}

impl Backbone {
    pub fn load(config: &EncoderConfig, vb: candle_nn::VarBuilder) -> Result<Self> {
        Ok(match config.arch {
            EncoderArch::Bert => {
                let cfg: bert::Config = serde_json::from_str(&config.raw)?;
                Backbone::Bert(bert::BertModel::load(vb, &cfg)?)
            }
            EncoderArch::DistilBert => {
                let cfg: distilbert::Config = serde_json::from_str(&config.raw)?;
                Backbone::DistilBert(distilbert::DistilBertModel::load(vb, &cfg)?)
            }
        })
    }

    /// Last hidden states `(b, t, hidden)` for `u32` ids and a 1-for-real mask.
    pub fn forward(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Backbone::Bert(m) => m.forward(ids, &ids.zeros_like()?, Some(mask))?,
            Backbone::DistilBert(m) => {
                let (b, t) = mask.dims2()?;
                // This layout expects 1 where attention is blocked.
                let blocked = mask.eq(0u32)?.reshape((b, 1, 1, t))?;
                m.forward(ids, &blocked)?
            }
        })
    }
}

/// Where a named encoder lives on disk.
pub(crate) fn resolve_encoder_dir(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.join("config.json").exists() {
        return Ok(direct);
    }
    if let Ok(root) = std::env::var(super::ENCODER_DIR_ENV) {
        let candidate = Path::new(&root).join(name);
        if candidate.join("config.json").exists() {
            return Ok(candidate);
        }
    }
    Err(Error::Checkpoint(format!(
        "cannot resolve encoder `{name}`: not a directory with config.json, and not found under ${}",
        super::ENCODER_DIR_ENV
    )))
}

/// Pretrained encoder files, with tensor names normalized to the bare
/// layout (`embeddings.*`, `encoder.*` / `transformer.*`, `pooler.*`).
pub(crate) struct PretrainedEncoder {
    pub config: EncoderConfig,
    pub tensors: HashMap<String, Tensor>,
    pub tokenizer: TokenizerAdapter,
}

impl PretrainedEncoder {
    pub fn open(name: &str, device: &Device) -> Result<Self> {
        let dir = resolve_encoder_dir(name)?;
        let config_path = dir.join("config.json");
        let raw = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let config = EncoderConfig::from_json(&raw)?;
        let weights = dir.join("model.safetensors");
        let bytes = std::fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
        let loaded = candle_core::safetensors::load_buffer(&bytes, device)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", weights.display())))?;
        let prefix = config.arch.prefix();
        let tensors = loaded
            .into_iter()
            .map(|(k, v)| (k.strip_prefix(prefix).map(str::to_string).unwrap_or(k), v))
            .collect();
        let tokenizer = TokenizerAdapter::from_file(&dir)?;
        Ok(Self {
            config,
            tensors,
            tokenizer,
        })
    }

    /// The pooler weights, when the checkpoint ships them.
    pub fn pooler_tensors(&self) -> HashMap<String, Tensor> {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with("pooler."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Dimensions of a small randomly initialized encoder, used where real
/// pretrained weights are unavailable (tests, offline demos).
#[derive(Debug, Clone)]
pub struct TinyEncoder {
    pub arch: EncoderArch,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    pub seed: u64,
}

impl TinyEncoder {
    pub fn new(arch: EncoderArch, layers: usize) -> Self {
        Self {
            arch,
            layers,
            hidden: 32,
            heads: 4,
            intermediate: 64,
            max_positions: 128,
            seed: 7,
        }
    }

    fn config_json(&self, vocab_size: usize) -> String {
        let value = match self.arch {
            EncoderArch::Bert => serde_json::json!({
                "model_type": "bert",
                "vocab_size": vocab_size,
                "hidden_size": self.hidden,
                "num_hidden_layers": self.layers,
                "num_attention_heads": self.heads,
                "intermediate_size": self.intermediate,
                "hidden_act": "gelu",
                "hidden_dropout_prob": 0.1,
                "max_position_embeddings": self.max_positions,
                "type_vocab_size": 2,
                "initializer_range": 0.02,
                "layer_norm_eps": 1e-12,
                "pad_token_id": 0,
                "classifier_dropout": null
            }),
            EncoderArch::DistilBert => serde_json::json!({
                "model_type": "distilbert",
                "vocab_size": vocab_size,
                "dim": self.hidden,
                "n_layers": self.layers,
                "n_heads": self.heads,
                "hidden_dim": self.intermediate,
                "activation": "gelu",
                "max_position_embeddings": self.max_positions,
                "initializer_range": 0.02,
                "pad_token_id": 0
            }),
        };
        serde_json::to_string_pretty(&value).expect("static json")
    }
}

/// Writes a randomly initialized encoder directory in the standard layout,
/// with tensor names under the usual `bert.` / `distilbert.` prefix.
pub fn write_tiny_encoder(
    dir: impl AsRef<Path>,
    tiny: &TinyEncoder,
    tokenizer: &TokenizerAdapter,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let raw = tiny.config_json(tokenizer.vocab_size());
    let config = EncoderConfig::from_json(&raw)?;
    let store = ParamStore::new();
    let rng = shared_rng(tiny.seed);
    let vb = store.builder("", None, rng.clone(), DType::F32, &Device::Cpu);
    Backbone::load(&config, vb)?;
    if tiny.arch == EncoderArch::Bert {
        let vb = store.builder("", None, rng, DType::F32, &Device::Cpu);
        candle_nn::linear(tiny.hidden, tiny.hidden, vb.pp("pooler").pp("dense"))?;
    }
    let prefix = tiny.arch.prefix();
    let tensors: Vec<(String, Tensor)> = store
        .tensors()?
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect();
    let weights = dir.join("model.safetensors");
    safetensors::serialize_to_file(tensors, None, &weights)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", weights.display())))?;
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, raw).map_err(|e| Error::io(&config_path, e))?;
    let tok_path = dir.join("tokenizer.json");
    std::fs::write(&tok_path, tokenizer.to_json()?).map_err(|e| Error::io(&tok_path, e))?;
    Ok(())
}
