//! Classify, then pass neutral text through untouched or rewrite harmful
//! text with a pluggable backend.

pub mod cassette;
mod lexicon;
mod remote;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::models::{Classifier, Prediction};
use crate::textprep::clean_text;

pub use lexicon::Lexicon;
pub use remote::{RemoteRewriter, API_KEY_ENV};

pub const DEFAULT_PROMPT: &str = "Rewrite the following to be polite and non-offensive: ";

/// Turns harmful text into a neutral version.
pub trait Rewriter: Send + Sync {
    /// Short backend identifier recorded in every result.
    fn id(&self) -> String;
    fn rewrite(&self, text: &str) -> Result<String>;
}

/// Deterministic offline backend: prefixes the text with a marker.
#[derive(Debug, Clone, Default)]
pub struct StubRewriter;

impl StubRewriter {
    pub const PREFIX: &'static str = "[rewritten] ";
}

impl Rewriter for StubRewriter {
    fn id(&self) -> String {
        "stub".into()
    }

    fn rewrite(&self, text: &str) -> Result<String> {
        Ok(format!("{}{text}", Self::PREFIX))
    }
}

impl Rewriter for Lexicon {
    fn id(&self) -> String {
        "lexicon".into()
    }

    fn rewrite(&self, text: &str) -> Result<String> {
        Ok(Lexicon::rewrite(self, text))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteLlm,
    Lexicon,
    #[default]
    Stub,
}

/// What to do when the backend cannot rewrite text judged harmful.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Return an error; the harmful text is not released.
    #[default]
    Closed,
    /// Return the original text, marked as flagged but unrewritten.
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriterConfig {
    pub backend: BackendKind,
    pub prompt_template: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_ms: u64,
    /// Extra attempts after the first failure.
    pub retries: usize,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
    pub endpoint: String,
    pub model: String,
    pub max_concurrent: usize,
    pub lexicon_path: Option<PathBuf>,
    pub failure_mode: FailureMode,
}

impl Default for RewriterConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Stub,
            prompt_template: DEFAULT_PROMPT.into(),
            max_tokens: 100,
            temperature: 0.7,
            timeout_ms: 30_000,
            retries: 2,
            backoff_ms: 500,
            endpoint: "https://api.openai.com/v1/completions".into(),
            model: "text-davinci-003".into(),
            max_concurrent: 4,
            lexicon_path: None,
            failure_mode: FailureMode::Closed,
        }
    }
}

impl RewriterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        if self.timeout_ms == 0 || self.max_concurrent == 0 {
            return Err(Error::Config("timeout_ms and max_concurrent must be positive".into()));
        }
        if self.backend == BackendKind::Lexicon && self.lexicon_path.is_none() {
            return Err(Error::Config("the lexicon backend needs lexicon_path".into()));
        }
        Ok(())
    }
}

/// Builds the configured backend. The remote one reads its credential from
/// the environment.
pub fn build_rewriter(config: &RewriterConfig) -> Result<Box<dyn Rewriter>> {
    config.validate()?;
    Ok(match config.backend {
        BackendKind::Stub => Box::new(StubRewriter),
        BackendKind::Lexicon => {
            let path = config.lexicon_path.as_ref().expect("validated");
            Box::new(Lexicon::from_file(path)?)
        }
        BackendKind::RemoteLlm => Box::new(RemoteRewriter::from_env(config.clone())?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Pass,
    Rewrite,
    /// Harmful, but the backend failed and fail-open mode released the
    /// original text.
    FlaggedUnrewritten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationResult {
    pub original: String,
    pub cleaned: String,
    pub label: Label,
    pub probabilities: [f64; NUM_CLASSES],
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten: Option<String>,
    pub backend: String,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ModerationResult {
    /// The text to publish: the rewrite when there is one, else the input.
    pub fn output(&self) -> &str {
        self.rewritten.as_deref().unwrap_or(&self.original)
    }
}

/// Label and probabilities for raw text.
pub fn classify(classifier: &Classifier, text: &str) -> Result<Prediction> {
    let mut out = classifier.classify(&[text])?;
    Ok(out.pop().expect("one prediction per input"))
}

/// A classifier plus a rewriter. Safe to share across threads.
pub struct Moderator {
    classifier: Classifier,
    rewriter: Box<dyn Rewriter>,
    failure_mode: FailureMode,
}

impl std::fmt::Debug for Moderator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Moderator")
            .field("classifier", &self.classifier)
            .field("backend", &self.rewriter.id())
            .field("failure_mode", &self.failure_mode)
            .finish()
    }
}

impl Moderator {
    pub fn new(classifier: Classifier, rewriter: Box<dyn Rewriter>, failure_mode: FailureMode) -> Self {
        Self {
            classifier,
            rewriter,
            failure_mode,
        }
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn backend_id(&self) -> String {
        self.rewriter.id()
    }

    pub fn failure_mode(&self) -> FailureMode {
        self.failure_mode
    }

    pub fn classify(&self, text: &str) -> Result<Prediction> {
        classify(&self.classifier, text)
    }

    /// Neutral text passes unchanged; hate speech and offensive language
    /// are sent, as originally written, to the rewriter. The rewrite is not
    /// re-classified.
    pub fn moderate(&self, text: &str) -> Result<ModerationResult> {
        let start = Instant::now();
        let prediction = self.classify(text)?;
        let mut result = ModerationResult {
            original: text.to_string(),
            cleaned: clean_text(text).into_string(),
            label: prediction.label,
            probabilities: prediction.probabilities,
            action: Action::Pass,
            rewritten: None,
            backend: self.rewriter.id(),
            latency_ms: 0.0,
            warning: None,
        };
        if prediction.label.is_harmful() {
            match self.rewriter.rewrite(text) {
                Ok(rewritten) => {
                    result.action = Action::Rewrite;
                    result.rewritten = Some(rewritten);
                }
                Err(e) => match self.failure_mode {
                    FailureMode::Closed => {
                        return Err(Error::RewriteFailed {
                            label: prediction.label,
                            probabilities: prediction.probabilities,
                            source: Box::new(e),
                        })
                    }
                    FailureMode::Open => {
                        tracing::warn!(error = %e, "rewrite failed; releasing flagged text");
                        result.action = Action::FlaggedUnrewritten;
                        result.warning = Some(format!("flagged_unrewritten: {e}"));
                    }
                },
            }
        }
        result.latency_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(result)
    }
}
