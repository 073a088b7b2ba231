//! The ten named configurations compared in the evaluation tables.

use super::{ModelKind, ModelSpec};
use crate::error::{Error, Result};

pub const FULL_ENCODER: &str = "bert-base-uncased";
pub const DISTILLED_ENCODER: &str = "distilbert-base-uncased";

pub const PRESET_NAMES: [&str; 10] = [
    "CNN",
    "LSTM",
    "Bi-LSTM",
    "BERT",
    "DistilBERT",
    "BERT+CNN",
    "UPDATED BERT+CNN",
    "DISTILBERT+CNN",
    "BERT+BI-LSTM",
    "DISTILBERT+BI-LSTM",
];

/// A named model plus the training switches that distinguish it.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub spec: ModelSpec,
    pub use_class_weights: bool,
    pub grad_clip_norm: Option<f64>,
}

pub fn preset_names() -> &'static [&'static str] {
    &PRESET_NAMES
}

/// Looks up a preset by name, case-insensitively and ignoring spaces.
pub fn preset(name: &str) -> Result<Preset> {
    let norm = |s: &str| s.to_ascii_uppercase().replace(' ', "");
    let wanted = norm(name);
    let canonical = PRESET_NAMES
        .iter()
        .find(|n| norm(n) == wanted)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown preset `{name}`; expected one of {}",
                PRESET_NAMES.join(", ")
            ))
        })?;
    let encoder = |kind, name: &str| ModelSpec {
        kind,
        encoder_name: Some(name.to_string()),
        ..ModelSpec::default()
    };
    let (spec, use_class_weights, grad_clip_norm) = match *canonical {
        "CNN" => (ModelSpec::new(ModelKind::Cnn), false, Some(1.0)),
        "LSTM" => (ModelSpec::new(ModelKind::Lstm), false, Some(1.0)),
        "Bi-LSTM" => (ModelSpec::new(ModelKind::Bilstm), false, Some(1.0)),
        "BERT" => (encoder(ModelKind::Encoder, FULL_ENCODER), false, Some(1.0)),
        "DistilBERT" => (encoder(ModelKind::Encoder, DISTILLED_ENCODER), false, Some(1.0)),
        // The first integration ran without the loss and stability changes
        // that distinguish its updated successor.
        "BERT+CNN" => (encoder(ModelKind::EncoderCnn, FULL_ENCODER), false, None),
        "UPDATED BERT+CNN" => (encoder(ModelKind::EncoderCnn, FULL_ENCODER), true, Some(1.0)),
        "DISTILBERT+CNN" => (encoder(ModelKind::EncoderCnn, DISTILLED_ENCODER), false, Some(1.0)),
        "BERT+BI-LSTM" => (encoder(ModelKind::EncoderBilstm, FULL_ENCODER), false, Some(1.0)),
        "DISTILBERT+BI-LSTM" => {
            (encoder(ModelKind::EncoderBilstm, DISTILLED_ENCODER), false, Some(1.0))
        }
        _ => unreachable!(),
    };
    Ok(Preset {
        name: canonical,
        spec,
        use_class_weights,
        grad_clip_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.spec.validate().unwrap();
            assert_eq!(p.name, name);
        }
    }

    #[test]
    fn lookup_is_forgiving() {
        assert_eq!(preset("updated bert + cnn").unwrap().name, "UPDATED BERT+CNN");
        assert!(preset("gpt").is_err());
    }

    #[test]
    fn updated_integration_differs_only_in_training() {
        let a = preset("BERT+CNN").unwrap();
        let b = preset("UPDATED BERT+CNN").unwrap();
        assert_eq!(a.spec, b.spec);
        assert!(!a.use_class_weights && b.use_class_weights);
        assert_eq!((a.grad_clip_norm, b.grad_clip_norm), (None, Some(1.0)));
    }
}
