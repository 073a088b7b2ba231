//! Command-line parsing and the implementation of every subcommand.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hatemod_core::corpus::{load_dataset, split, EdaReport, SplitManifest, SplitSpec, Splits};
use hatemod_core::evaluation::{compare_report, NamedReport};
use hatemod_core::models::{preset, BuildOptions, Classifier, ModelKind, ModelSpec};
use hatemod_core::moderation::{BackendKind, FailureMode, Moderator};
use hatemod_core::textprep::clean_text;
use hatemod_core::training::{
    evaluate_model, prepare_classifier, train, CheckpointPolicy, RunManifest, TrainConfig,
    MANIFEST_SCHEMA_VERSION,
};

use crate::config::AppConfig;
use crate::service;

pub const REPL_PROMPT: &str = "Enter a tweet to analyze (or type 'exit' to quit): ";

#[derive(Debug, Parser)]
#[command(name = "hatemod", version, about = "Hate speech classification and moderation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean text line by line, from a file or stdin.
    Clean {
        /// Input file; stdin when omitted or `-`.
        input: Option<PathBuf>,
    },
    /// Exploratory statistics of a corpus, as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition a corpus and write the split manifest.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint, curves and run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one part of a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split manifest from `split` or `train`.
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum, default_value_t = Part::Test)]
        part: Part,
        /// Row label in comparison tables; defaults to the model kind.
        #[arg(long)]
        name: Option<String>,
        /// Epoch count shown in comparison tables.
        #[arg(long, default_value_t = 0)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render evaluation reports or run manifests as one comparison table.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Classify one text and rewrite it when harmful.
    Moderate {
        #[command(flatten)]
        model: ModelArgs,
        text: String,
    },
    /// Interactive loop: classify each line, rewriting harmful ones.
    Repl {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Stub,
    Lexicon,
    RemoteLlm,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Stub => BackendKind::Stub,
            Backend::Lexicon => BackendKind::Lexicon,
            Backend::RemoteLlm => BackendKind::RemoteLlm,
        }
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Shuffle the whole corpus instead of each class separately.
    #[arg(long)]
    pub no_stratify: bool,
}

impl SplitArgs {
    fn resolve(&self, base: SplitSpec) -> SplitSpec {
        SplitSpec {
            seed: self.seed.unwrap_or(base.seed),
            train_fraction: self.train_fraction.unwrap_or(base.train_fraction),
            val_fraction: self.val_fraction.unwrap_or(base.val_fraction),
            test_fraction: self.test_fraction.unwrap_or(base.test_fraction),
            stratified: base.stratified && !self.no_stratify,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Reuse an existing split manifest instead of splitting afresh.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub split_args: SplitArgs,
    /// Named configuration, e.g. `CNN` or `DistilBERT+CNN`.
    #[arg(long, conflicts_with = "kind")]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Cnn,
    Lstm,
    Bilstm,
    Encoder,
    EncoderCnn,
    EncoderBilstm,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Cnn => ModelKind::Cnn,
            Kind::Lstm => ModelKind::Lstm,
            Kind::Bilstm => ModelKind::Bilstm,
            Kind::Encoder => ModelKind::Encoder,
            Kind::EncoderCnn => ModelKind::EncoderCnn,
            Kind::EncoderBilstm => ModelKind::EncoderBilstm,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint file; falls back to `service.checkpoint` in the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Release harmful text unrewritten, with a warning, when the backend fails.
    #[arg(long)]
    pub fail_open: bool,
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::from_file(p),
        None => Ok(AppConfig::default()),
    }
}

fn write_output(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_moderator(config: &AppConfig, args: &ModelArgs) -> Result<Moderator> {
    let checkpoint = args
        .checkpoint
        .clone()
        .or_else(|| config.service.checkpoint.clone())
        .ok_or_else(|| crate::exit::config_error("no checkpoint given (--checkpoint)"))?;
    let mut rewriter = config.rewriter.clone();
    if let Some(b) = args.backend {
        rewriter.backend = b.into();
    }
    if args.fail_open {
        rewriter.failure_mode = FailureMode::Open;
    }
    Ok(service::load_moderator(&checkpoint, &rewriter)?.0)
}

/// Runs one command, writing to the given streams.
pub fn run(cli: Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Clean { input } => {
            let mut text = String::new();
            match input.as_deref() {
                Some(p) if p != Path::new("-") => {
                    text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                }
                _ => {
                    stdin.read_to_string(&mut text)?;
                }
            }
            for line in text.lines() {
                writeln!(stdout, "{}", clean_text(line).as_str())?;
            }
        }
        Command::Stats { data, top_k, out } => {
            let loaded = load_dataset(&data)?;
            let report = EdaReport::build(&loaded, top_k);
            write_output(out.as_deref(), &serde_json::to_string_pretty(&report)?, stdout)?;
        }
        Command::Split {
            data,
            split: args,
            out,
        } => {
            let ds = load_dataset(&data)?.dataset;
            let spec = args.resolve(config.split.unwrap_or_default());
            let manifest = split(&ds, &spec)?.manifest(spec);
            std::fs::write(&out, serde_json::to_string_pretty(&manifest)?)
                .with_context(|| format!("writing {}", out.display()))?;
            writeln!(stdout, "{}", manifest.digest())?;
        }
        Command::Train(args) => run_train(&config, args, stdout)?,
        Command::Eval {
            checkpoint,
            data,
            split: manifest,
            part,
            name,
            epochs,
            out,
        } => {
            let ds = load_dataset(&data)?.dataset;
            let manifest: SplitManifest = read_json(&manifest)?;
            let splits = manifest.apply(&ds)?;
            let part = match part {
                Part::Train => &splits.train,
                Part::Val => &splits.val,
                Part::Test => &splits.test,
            };
            let clf = Classifier::load(&checkpoint, &Device::Cpu)?;
            let report = NamedReport {
                model: name.unwrap_or_else(|| clf.spec().kind.as_str().to_string()),
                epochs,
                report: evaluate_model(&clf, part)?,
            };
            write_output(out.as_deref(), &serde_json::to_string_pretty(&report)?, stdout)?;
        }
        Command::Compare { reports, format } => {
            let named = reports
                .iter()
                .map(|p| read_report(p))
                .collect::<Result<Vec<_>>>()?;
            let table = compare_report(&named)?;
            let text = match format {
                Format::Text => table.to_text(),
                Format::Csv => table.to_delimited(b',')?,
                Format::Json => serde_json::to_string_pretty(&table)?,
            };
            write!(stdout, "{}", text.trim_end())?;
            writeln!(stdout)?;
        }
        Command::Moderate { model, text } => {
            let moderator = build_moderator(&config, &model)?;
            let result = moderator.moderate(&text)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&result)?)?;
        }
        Command::Repl { model } => {
            let moderator = build_moderator(&config, &model)?;
            repl(&moderator, stdin, stdout)?;
        }
        Command::Serve {
            bind,
            checkpoint,
            backend,
        } => {
            let mut service_cfg = config.service.clone();
            if let Some(b) = bind {
                service_cfg.bind = b;
            }
            if checkpoint.is_some() {
                service_cfg.checkpoint = checkpoint;
            }
            let mut rewriter = config.rewriter.clone();
            if let Some(b) = backend {
                rewriter.backend = b.into();
            }
            rewriter.validate()?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(service::serve(service_cfg, rewriter))?;
        }
    }
    Ok(())
}

/// Accepts either an `eval` report or a `train` run manifest.
fn read_report(path: &Path) -> Result<NamedReport> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("report").is_some() {
        return Ok(serde_json::from_value(value)?);
    }
    let run: RunManifest = serde_json::from_value(value)
        .with_context(|| format!("{} is neither a report nor a run manifest", path.display()))?;
    let report = run.test_report.ok_or_else(|| {
        hatemod_core::Error::InvalidData(format!("{} has no test report", path.display()))
    })?;
    Ok(NamedReport {
        model: run.model_name,
        epochs: run.config.epochs,
        report,
    })
}

fn run_train(config: &AppConfig, args: TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let (model_name, spec, mut train_cfg) = match (&args.preset, args.kind) {
        (Some(name), _) => {
            let p = preset(name)?;
            (p.name.to_string(), p.spec.clone(), TrainConfig::for_preset(&p))
        }
        (None, kind) => {
            let spec = match (kind, &config.model) {
                (Some(k), _) => ModelSpec::new(k.into()),
                (None, Some(spec)) => spec.clone(),
                (None, None) => ModelSpec::default(),
            };
            let train_cfg = config
                .train
                .clone()
                .unwrap_or_else(|| TrainConfig::for_kind(spec.kind));
            (spec.kind.as_str().to_string(), spec, train_cfg)
        }
    };
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        train_cfg.learning_rate = lr;
    }
    if let Some(s) = args.train_seed {
        train_cfg.seed = s;
    }
    train_cfg.validate()?;

    let ds = load_dataset(&args.data)?.dataset;
    let (splits, manifest): (Splits, SplitManifest) = match &args.split {
        Some(path) => {
            let m: SplitManifest = read_json(path)?;
            (m.apply(&ds)?, m)
        }
        None => {
            let spec = args.split_args.resolve(config.split.unwrap_or_default());
            let s = split(&ds, &spec)?;
            let m = s.manifest(spec);
            (s, m)
        }
    };

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let out = |name: &str| args.out_dir.join(name);
    std::fs::write(out("split.json"), serde_json::to_string_pretty(&manifest)?)?;

    let opts = BuildOptions {
        seed: train_cfg.seed,
        ..BuildOptions::default()
    };
    let clf = prepare_classifier(&spec, &splits.train, &opts)?;
    let checkpoint = out("model.safetensors");
    let outcome = train(clf, &splits, &train_cfg, &CheckpointPolicy::to_file(&checkpoint))?;
    std::fs::write(out("curves.json"), outcome.curves.to_json()?)?;
    std::fs::write(out("curves.csv"), outcome.curves.to_csv()?)?;
    let test_report = evaluate_model(&outcome.classifier, &splits.test)?;

    let run = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        model_name,
        spec: outcome.classifier.spec().clone(),
        config: train_cfg.clone(),
        seed: train_cfg.seed,
        split_manifest_sha256: manifest.digest(),
        dataset_sha256: ds.provenance().sha256.clone(),
        class_weights: outcome.class_weights,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        checkpoint: Some(checkpoint),
        curves: outcome.curves,
        test_report: Some(test_report),
    };
    run.write(&out("run.json"))?;
    writeln!(
        stdout,
        "best epoch {} (val loss {:.4}); test accuracy {:.4}",
        run.best_epoch,
        run.best_val_loss,
        run.test_report.as_ref().map_or(f64::NAN, |r| r.accuracy)
    )?;
    Ok(())
}

/// Prompts, classifies and conditionally rewrites until `exit` or end of
/// input. A failed rewrite is reported and the loop continues.
pub fn repl(moderator: &Moderator, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let mut line = String::new();
    loop {
        write!(out, "{REPL_PROMPT}")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            break;
        }
        let text = line.strip_suffix('\n').unwrap_or(&line);
        let text = text.strip_suffix('\r').unwrap_or(text);
        if text.to_lowercase() == "exit" {
            break;
        }
        match moderator.moderate(text) {
            Ok(result) => {
                writeln!(out, "Classified as: {}", result.label.display_name())?;
                if let Some(rewritten) = &result.rewritten {
                    writeln!(out, "Rewritten: {rewritten}")?;
                }
                if let Some(warning) = &result.warning {
                    writeln!(out, "Warning: {warning}")?;
                }
            }
            Err(hatemod_core::Error::RewriteFailed { label, source, .. }) => {
                writeln!(out, "Classified as: {}", label.display_name())?;
                writeln!(out, "Rewrite unavailable, text withheld: {source}")?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
