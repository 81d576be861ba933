//! The `refgen` command line: `synth`, `train`, `generate` and `evaluate`.
//!
//! Every command writes one output directory holding its artifacts and a
//! `manifest.json`. Artifacts are byte-reproducible; only the manifest
//! carries timestamps and timings.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::corpus::{
    generate_synthetic_corpus, load_corpus, read_jsonl, save_corpus, write_jsonl, Corpus, Split, Vocabulary,
};
use crate::evaluation::{
    evaluate, report_from_predictions, EvaluationReport, FrequencyPredictor, OnlyNamesPredictor, Prediction,
    PronounLexicon,
};
use crate::inference::{DecodeConfig, ModelPredictor};
use crate::model::{DecoderVariant, ModelConfig, RefexModel};
use crate::training::{grid_select, train, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "refgen", version, about = "Neural referring-expression generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus directory.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Decode a split with a trained checkpoint.
    Generate(GenerateArgs),
    /// Score predictions or a baseline on a split.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub templates: usize,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(2..))]
    pub entities: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Seq2seq,
    Catt,
    Hieratt,
}

impl From<VariantArg> for DecoderVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Seq2seq => DecoderVariant::Seq2Seq,
            VariantArg::Catt => DecoderVariant::CAtt,
            VariantArg::Hieratt => DecoderVariant::HierAtt,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    /// TOML file with optional `[model]` and `[train]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Run the dropout x beam grid instead of a single training run.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub beam: u64,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_len: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Onlynames,
    Frequency,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Pronoun list, one per line; a built-in English list otherwise.
    #[arg(long)]
    pub pronouns: Option<PathBuf>,
    /// Output directory for the report.
    #[arg(long)]
    pub report: PathBuf,
}

/// Model settings accepted from a config file; unset sizes follow the
/// encoder size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: Option<usize>,
    pub hidden_dim_per_direction: Option<usize>,
    pub decoder_hidden_dim: Option<usize>,
    pub attention_dim: Option<usize>,
    pub hier_proj_dim: Option<usize>,
    pub dropout_p: Option<f64>,
    pub min_count: Option<usize>,
}

impl ModelSettings {
    pub fn resolve(&self, variant: DecoderVariant) -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(
            variant,
            0,
            self.embed_dim.unwrap_or(300),
            self.hidden_dim_per_direction.unwrap_or(512),
        );
        if let Some(d) = self.decoder_hidden_dim {
            cfg.decoder_hidden_dim = d;
        }
        if let Some(a) = self.attention_dim {
            cfg.attention_dim = a;
        }
        if let Some(p) = self.hier_proj_dim {
            cfg.hier_proj_dim = p;
        }
        if let Some(p) = self.dropout_p {
            cfg.dropout_p = p;
        }
        if let Some(m) = self.min_count {
            cfg.min_count = m;
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    /// sha256 of each artifact written next to the manifest.
    pub artifacts: std::collections::BTreeMap<String, String>,
    pub started_unix_secs: u64,
    pub finished_unix_secs: u64,
    pub extra: serde_json::Value,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    fn create(
        dir: &Path,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        corpus: Option<&Path>,
    ) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                config,
                seed,
                corpus: corpus.map(Path::to_path_buf),
                artifacts: Default::default(),
                started_unix_secs: now_secs(),
                finished_unix_secs: 0,
                extra: json!({}),
            },
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.insert(name.into(), sha256_hex(bytes));
        Ok(path)
    }

    /// Hashes files that some other writer already placed in the directory.
    fn record(&mut self, name: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest.artifacts.insert(name.into(), sha256_hex(&bytes));
        Ok(())
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.manifest.finished_unix_secs = now_secs();
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn load(path: &Path) -> anyhow::Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let corpus = generate_synthetic_corpus(a.seed, a.templates, a.entities as usize)?;
    let config = json!({"seed": a.seed, "templates": a.templates, "entities": a.entities});
    let mut run = RunDir::create(&a.out, "synth", config, Some(a.seed), None)?;
    save_corpus(&corpus, &a.out)?;
    for split in Split::ALL {
        run.record(split.file_name())?;
    }
    run.record(crate::corpus::TEMPLATES_FILE)?;
    run.manifest.extra = json!({
        "train": corpus.train.len(),
        "dev": corpus.dev.len(),
        "test": corpus.test.len(),
        "templates": corpus.templates.len(),
    });
    run.finish()?;
    println!(
        "wrote {} instances ({} train / {} dev / {} test) to {}",
        corpus.len(),
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<(ModelConfig, TrainConfig)> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = a.embed_dim {
        rc.model.embed_dim = Some(d);
    }
    if let Some(h) = a.hidden_dim {
        rc.model.hidden_dim_per_direction = Some(h);
    }
    if let Some(p) = a.dropout {
        rc.model.dropout_p = Some(p);
    }
    let mut tc = rc.train;
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(e) = a.epochs {
        tc.max_epochs = e;
        tc.patience = tc.patience.min(e);
    }
    if let Some(b) = a.batch_size {
        tc.batch_size = b;
    }
    if let Some(p) = a.patience {
        tc.patience = p;
    }
    let mc = rc.model.resolve(a.variant.into());
    tc.validate()?;
    Ok((mc, tc))
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let (mc, tc) = resolve_train_config(a)?;
    let corpus = load(&a.corpus)?;
    let config = json!({"model": mc, "train": tc, "grid": a.grid});
    let mut run = RunDir::create(&a.out, "train", config, Some(tc.seed), Some(&a.corpus))?;
    let (model, log, extra) = if a.grid {
        let g = grid_select(&mc, &tc, &corpus)?;
        let log = g
            .logs
            .iter()
            .find(|(p, _)| *p == g.dropout_p)
            .map(|(_, l)| l.clone())
            .expect("winning log");
        let extra = json!({
            "selected_dropout": g.dropout_p,
            "selected_beam": g.beam_size,
            "dev_accuracy": g.dev_accuracy,
            "cells": g.cells,
            "wall_time_secs": g.logs.iter().map(|(_, l)| l.total_wall_time_secs()).sum::<f64>(),
        });
        (g.model, log, extra)
    } else {
        let out = train(&mc, &tc, &corpus)?;
        let extra = json!({
            "best_epoch": out.log.best_epoch,
            "best_dev_accuracy": out.log.best_dev_accuracy,
            "epochs_run": out.log.records.len(),
            "wall_time_secs": out.log.total_wall_time_secs(),
        });
        (out.model, out.log, extra)
    };
    let bytes = model.to_bytes()?;
    run.write(CHECKPOINT_FILE, &bytes)?;
    run.write(TRAIN_LOG_FILE, log.to_csv().as_bytes())?;
    run.manifest.extra = extra;
    run.finish()?;
    println!(
        "best dev accuracy {:.4} at epoch {}; checkpoint sha256 {}",
        log.best_dev_accuracy,
        log.best_epoch,
        sha256_hex(&bytes)
    );
    Ok(())
}

pub fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let model = RefexModel::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let corpus = load(&a.corpus)?;
    let vocab = Vocabulary::build(&corpus, model.config().min_count)?;
    if vocab.fingerprint() != model.vocab().fingerprint() {
        bail!(
            "checkpoint vocabulary ({} tokens, {}) does not match corpus vocabulary ({} tokens, {})",
            model.vocab().len(),
            &model.vocab().fingerprint()[..12],
            vocab.len(),
            &vocab.fingerprint()[..12]
        );
    }
    let decode = DecodeConfig {
        beam_size: a.beam as usize,
        max_len: a.max_len as usize,
        alpha: 0.6,
    };
    let config = json!({"split": a.split, "decode": decode, "checkpoint": a.checkpoint});
    let mut run = RunDir::create(&a.out, "generate", config, None, Some(&a.corpus))?;
    let mut predictor = ModelPredictor { model: &model, decode };
    let preds = crate::evaluation::predict_split(&mut predictor, &corpus, a.split)?;
    write_jsonl(&a.out.join(PREDICTIONS_FILE), &preds)?;
    run.record(PREDICTIONS_FILE)?;
    let ckpt = fs::read(&a.checkpoint)?;
    run.manifest.extra = json!({"checkpoint_sha256": sha256_hex(&ckpt), "predictions": preds.len()});
    run.finish()?;
    println!(
        "wrote {} predictions to {}",
        preds.len(),
        a.out.join(PREDICTIONS_FILE).display()
    );
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let corpus = load(&a.corpus)?;
    let lexicon = match &a.pronouns {
        Some(p) => PronounLexicon::from_file(p)?,
        None => PronounLexicon::default(),
    };
    let (label, report, preds): (String, EvaluationReport, Option<Vec<Prediction>>) = match (&a.predictions, a.baseline)
    {
        (Some(path), _) => {
            let preds: Vec<Prediction> = read_jsonl(path)?;
            let report = report_from_predictions(&corpus, a.split, &preds, &lexicon)?;
            (path.display().to_string(), report, None)
        }
        (None, Some(BaselineArg::Onlynames)) => {
            let (r, p) = evaluate(&mut OnlyNamesPredictor, &corpus, a.split, &lexicon)?;
            ("onlynames".into(), r, Some(p))
        }
        (None, Some(BaselineArg::Frequency)) => {
            let mut fp = FrequencyPredictor::fit(&corpus, &lexicon);
            let (r, p) = evaluate(&mut fp, &corpus, a.split, &lexicon)?;
            ("frequency".into(), r, Some(p))
        }
        (None, None) => bail!("one of --predictions or --baseline is required"),
    };
    let config = json!({
        "split": a.split,
        "predictions": a.predictions,
        "baseline": a.baseline.map(|b| format!("{b:?}").to_lowercase()),
        "pronouns": a.pronouns,
    });
    let mut run = RunDir::create(&a.report, "evaluate", config, None, Some(&a.corpus))?;
    let table = report.to_table(&label);
    run.write(
        REPORT_JSON_FILE,
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    run.write(REPORT_TEXT_FILE, table.as_bytes())?;
    if let Some(p) = preds {
        write_jsonl(&a.report.join(PREDICTIONS_FILE), &p)?;
        run.record(PREDICTIONS_FILE)?;
    }
    run.finish()?;
    print!("{table}");
    Ok(())
}
