//! TOML configuration shared by the CLI and the service.
//!
//! ```toml
//! [service]
//! bind = "127.0.0.1:8080"
//! checkpoint = "runs/cnn/model.safetensors"
//!
//! [rewriter]
//! backend = "lexicon"
//! lexicon_path = "lexicon.tsv"
//!
//! [model]
//! kind = "cnn"
//!
//! [train]
//! epochs = 3
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hatemod_core::corpus::SplitSpec;
use hatemod_core::models::ModelSpec;
use hatemod_core::moderation::RewriterConfig;
use hatemod_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub checkpoint: Option<PathBuf>,
    /// Largest accepted request body in bytes.
    pub max_body_bytes: usize,
    /// Inference calls allowed to run at once.
    pub max_concurrent_inference: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            checkpoint: None,
            max_body_bytes: 16 * 1024,
            max_concurrent_inference: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub service: ServiceConfig,
    pub rewriter: RewriterConfig,
    pub model: Option<ModelSpec>,
    pub train: Option<TrainConfig>,
    pub split: Option<SplitSpec>,
}

impl AppConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: AppConfig = toml::from_str(text).map_err(crate::exit::config_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.rewriter.validate()?;
        if let Some(spec) = &self.model {
            spec.validate()?;
        }
        if let Some(train) = &self.train {
            train.validate()?;
        }
        if let Some(split) = &self.split {
            split.validate()?;
        }
        if self.service.max_body_bytes == 0 || self.service.max_concurrent_inference == 0 {
            return Err(crate::exit::config_error(
                "max_body_bytes and max_concurrent_inference must be positive",
            ));
        }
        Ok(())
    }
}
