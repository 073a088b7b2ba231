//! Checkpoint files: a safetensors archive of named parameters whose header
//! metadata carries the format version, the model spec, the tokenizer and,
//! for encoder kinds, the encoder configuration.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device};
use safetensors::SafeTensors;

use super::encoder::EncoderConfig;
use super::handle::{assemble, BuildOptions, ModelHandle, Sources};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::textprep::TokenizerAdapter;

pub const CHECKPOINT_FORMAT_VERSION: &str = "1";

/// Directory searched for encoders given by name rather than path.
pub const ENCODER_DIR_ENV: &str = "HATEMOD_ENCODER_DIR";

const KEY_VERSION: &str = "format_version";
const KEY_SPEC: &str = "model_spec";
const KEY_TOKENIZER: &str = "tokenizer";
const KEY_ENCODER: &str = "encoder_config";

pub(crate) fn save(handle: &ModelHandle, tokenizer: &TokenizerAdapter, path: &Path) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert(KEY_VERSION.to_string(), CHECKPOINT_FORMAT_VERSION.to_string());
    meta.insert(KEY_SPEC.to_string(), serde_json::to_string(handle.spec())?);
    meta.insert(KEY_TOKENIZER.to_string(), tokenizer.to_json()?);
    if let Some(raw) = handle.encoder_config_json() {
        meta.insert(KEY_ENCODER.to_string(), raw.to_string());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tensors = handle.params().tensors()?;
    // Write next to the target and rename, so readers never see a partial file.
    let tmp = path.with_extension("safetensors.tmp");
    let bytes = safetensors::serialize(tensors, Some(meta))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", tmp.display())))?;
    let bytes = canonical_header(&bytes)?;
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Rewrites the JSON header with sorted keys. The library emits metadata in
/// hash order, which would make identical models differ byte for byte.
fn canonical_header(bytes: &[u8]) -> Result<Vec<u8>> {
    let bad = |msg: &str| Error::Checkpoint(format!("serialized checkpoint: {msg}"));
    let len_bytes: [u8; 8] = bytes.get(..8).and_then(|b| b.try_into().ok()).ok_or_else(|| bad("short"))?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let header = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let mut entries: BTreeMap<String, serde_json::Value> = serde_json::from_slice(header)?;
    if let Some(meta) = entries.get_mut("__metadata__") {
        let sorted: BTreeMap<String, String> = serde_json::from_value(meta.take())?;
        *meta = serde_json::to_value(sorted)?;
    }
    let mut json = serde_json::to_vec(&entries)?;
    // Data must start on an 8-byte boundary; the format pads with spaces.
    while json.len() % 8 != 0 {
        json.push(b' ');
    }
    let mut out = Vec::with_capacity(bytes.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[8 + len..]);
    Ok(out)
}

pub(crate) fn load(path: &Path, device: &Device) -> Result<(ModelHandle, TokenizerAdapter)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| bad("no metadata; not a model checkpoint".into()))?;
    let get = |key: &str| {
        meta.get(key)
            .ok_or_else(|| bad(format!("metadata lacks `{key}`")))
    };
    let version = get(KEY_VERSION)?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(bad(format!(
            "format version {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
        )));
    }
    let spec: ModelSpec =
        serde_json::from_str(get(KEY_SPEC)?).map_err(|e| bad(format!("model spec: {e}")))?;
    spec.validate()?;
    let tokenizer = TokenizerAdapter::from_json(get(KEY_TOKENIZER)?)?;
    let encoder = match (spec.kind.uses_encoder(), meta.get(KEY_ENCODER)) {
        (true, Some(raw)) => Some(EncoderConfig::from_json(raw)?),
        (true, None) => return Err(bad("encoder kind without encoder_config".into())),
        (false, _) => None,
    };
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)
        .map_err(|e| bad(e.to_string()))?;
    let dtype = tensors.values().next().map(|t| t.dtype()).unwrap_or(DType::F32);
    let opts = BuildOptions {
        seed: 0,
        device: device.clone(),
        dtype,
    };
    let handle = assemble(spec, encoder, Sources::Checkpoint(tensors), &opts)?;
    Ok((handle, tokenizer))
}
