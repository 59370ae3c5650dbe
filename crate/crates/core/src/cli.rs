//! Command-line front end. Every subcommand reads flags, an optional TOML
//! config (one table per subcommand, flags win), writes its artifacts plus
//! `resolved_config.toml` and `run_manifest.json` into `--out`, and logs to
//! stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregation::{eval_aggregation, DelimiterPredictor, ToyAggregator};
use crate::backend::{
    read_manifest, resolve_model_path, sha256_hex, write_json, Control, EntailmentClassifier, EpochStats, LexicalEntailment,
    ModelDims, ModelKind, ProcessBackend, TextGenerator, ToySeq2Seq, TrainConfig, Vocab,
};
use crate::compression::{model_variant, pc_training_source, pc_vocab, PcVariant};
use crate::corpus::{
    build_corpus, load_corpus, CorefResolver, CorpusBackends, CorpusConfig, HeuristicCoref, LengthBuckets, RuleSplitter,
};
use crate::error::{Error, Result};
use crate::eval::{
    align, evaluate_system, intrinsic_eval, load_references, CommandMeteor, EvalSettings, IntrinsicModels, MeteorScorer,
    SystemOutput,
};
use crate::facts::{load_templates, realize_all, Delimiters};
use crate::ordering::{eval_ordering, FactOrderer, PointerOrderer};
use crate::pipeline::{batch_generate, read_dataset, CorpusVariant, Pipeline, PipelineConfig, Stages, COMMAND_PREFIX};
use crate::rng::substream;

#[derive(Debug, Parser)]
#[command(name = "d2t", version, about = "Zero-shot data-to-text generation toolkit")]
pub struct Cli {
    /// TOML file with one table per subcommand, e.g. `[train]`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic parallel corpus from a paragraph dump.
    BuildCorpus(BuildCorpusArgs),
    /// Train a split-and-rephrase, ordering, aggregation or compression model.
    Train(TrainArgs),
    /// Generate paragraphs for a triple dataset.
    Generate(GenerateArgs),
    /// Score system outputs, content plans or modules.
    Evaluate(EvaluateArgs),
    /// Concatenate template facts without any model.
    CopyBaseline(CopyBaselineArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BuildCorpusArgs {
    /// JSONL `{article_id, title?, text}` or TSV dump.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Paragraphs kept per length bucket.
    #[arg(long)]
    pub quota: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Largest split recursion depth drawn per sentence.
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// `rule`, a split checkpoint directory, or `cmd:<worker>`.
    #[arg(long)]
    pub splitter: Option<String>,
    /// `heuristic` or `cmd:<worker>`.
    #[arg(long)]
    pub coref: Option<String>,
    /// `lexical` or `cmd:<worker>`.
    #[arg(long)]
    pub nli: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Sr,
    Ord,
    Agg,
    Pc,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub which: Which,
    /// Corpus JSONL; for `sr`, `{source, target}` pairs.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// PC, PC_AGG or PC_ORD_AGG (required for `pc`).
    #[arg(long)]
    pub variant: Option<String>,
    /// `toy` or `pretrained` optimiser settings.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub grad_accum: Option<usize>,
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Continue from the checkpoint in `--out` up to `--epochs` in total.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resume: Option<bool>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// JSONL of `{id, triples}` or `{id, name?, attributes}`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// THREE, TWO or ONE.
    #[arg(long)]
    pub stages: Option<String>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub dataset_id: Option<String>,
    #[arg(long)]
    pub ord_model: Option<String>,
    #[arg(long)]
    pub agg_model: Option<String>,
    #[arg(long)]
    pub pc_model: Option<String>,
    /// `full` or `filtered`; recorded with the outputs.
    #[arg(long)]
    pub corpus_variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit 0 even when some records fail.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_errors: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    System,
    Plans,
    Intrinsic,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub mode: Option<EvalMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generation JSONL (system mode).
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// JSONL with `{id, references}` or `{id, reference}` (system mode).
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// JSONL with `{id, predicted, gold}` orders and optional
    /// `predicted_delimiters`/`gold_delimiters` (plans mode).
    #[arg(long)]
    pub plans: Option<PathBuf>,
    /// Held-out corpus split (intrinsic mode).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub ord_model: Option<String>,
    #[arg(long)]
    pub agg_model: Option<String>,
    #[arg(long)]
    pub pc_model: Option<String>,
    /// `lexical` or `cmd:<worker>`.
    #[arg(long)]
    pub nli: Option<String>,
    /// Require omission and hallucination rates.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub semantic: Option<bool>,
    /// METEOR command; receives hypothesis and reference files.
    #[arg(long)]
    pub meteor: Option<String>,
    #[arg(long)]
    pub system_tag: Option<String>,
    /// Also write per-example `details.tsv`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub details: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CopyBaselineArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub dataset_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failed(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Failed(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(m: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(m.into()))
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn existing(p: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    let p = required(p, flag)?;
    if !p.exists() {
        return usage(format!("--{flag} {} does not exist", p.display()));
    }
    Ok(p)
}

/// Overlays non-null flag values on the config table and reads the result
/// back as `T`.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, table: Option<&toml::Table>) -> CliResult<T> {
    let mut base = match table {
        Some(t) => serde_json::to_value(t).map_err(Error::from)?,
        None => Value::Object(Default::default()),
    };
    let over = serde_json::to_value(flags).map_err(Error::from)?;
    if let (Value::Object(b), Value::Object(o)) = (&mut base, over) {
        for (k, v) in o {
            if !v.is_null() {
                b.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("config: {e}")))
}

struct RunConfig {
    file: toml::Table,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig {
                file: toml::Table::new(),
            });
        };
        if !path.exists() {
            return usage(format!("--config {} does not exist", path.display()));
        }
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: toml::Table = raw
            .parse()
            .map_err(|e| CliError::Failed(Error::Config(format!("{}: {e}", path.display()))))?;
        Ok(RunConfig { file })
    }

    fn section(&self, name: &str) -> Option<&toml::Table> {
        self.file.get(name).and_then(toml::Value::as_table)
    }

    fn workers(&self, flag: Option<usize>) -> usize {
        flag.or_else(|| self.file.get("workers").and_then(toml::Value::as_integer).map(|w| w as usize))
            .unwrap_or(1)
            .max(1)
    }
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

fn hash_path(path: &Path) -> Result<Vec<FileHash>> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            files.extend(hash_path(&e)?);
        }
    } else if path.exists() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        files.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(files)
}

const RESOLVED: &str = "resolved_config.toml";
const RUN_MANIFEST: &str = "run_manifest.json";

/// Writes the resolved config (replayable with `--config`) and the manifest
/// with content hashes of inputs and artifacts.
fn write_run_record<T: Serialize>(out: &Path, section: &str, resolved: &T, workers: usize, inputs: &[PathBuf]) -> Result<()> {
    let mut table = toml::Table::new();
    table.insert("workers".into(), toml::Value::Integer(workers as i64));
    let value = toml::Value::try_from(resolved).map_err(|e| Error::Config(e.to_string()))?;
    table.insert(section.into(), value);
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join(RESOLVED);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let mut input_hashes = Vec::new();
    for p in inputs {
        input_hashes.extend(hash_path(p)?);
    }
    let mut artifacts = Vec::new();
    for f in hash_path(out)? {
        if !f.path.ends_with(RUN_MANIFEST) {
            artifacts.push(f);
        }
    }
    let manifest = serde_json::json!({
        "tool": "d2t",
        "version": env!("CARGO_PKG_VERSION"),
        "command": section,
        "config": serde_json::to_value(resolved)?,
        "workers": workers,
        "inputs": input_hashes,
        "artifacts": artifacts,
    });
    write_json(&out.join(RUN_MANIFEST), &manifest)
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn nli_backend(spec: &str) -> CliResult<Box<dyn EntailmentClassifier>> {
    match spec {
        "lexical" => Ok(Box::new(LexicalEntailment::default())),
        s if s.starts_with(COMMAND_PREFIX) => Ok(Box::new(ProcessBackend::from_command_line(&s[COMMAND_PREFIX.len()..])?)),
        s => usage(format!("unknown NLI backend {s:?} (use `lexical` or `cmd:<worker>`)")),
    }
}

fn coref_backend(spec: &str) -> CliResult<Box<dyn CorefResolver>> {
    match spec {
        "heuristic" => Ok(Box::new(HeuristicCoref)),
        s if s.starts_with(COMMAND_PREFIX) => Ok(Box::new(ProcessBackend::from_command_line(&s[COMMAND_PREFIX.len()..])?)),
        s => usage(format!(
            "unknown coreference backend {s:?} (use `heuristic` or `cmd:<worker>`)"
        )),
    }
}

fn splitter_backend(spec: &str) -> CliResult<Box<dyn TextGenerator>> {
    match spec {
        "rule" => Ok(Box::new(RuleSplitter)),
        s if s.starts_with(COMMAND_PREFIX) => Ok(Box::new(ProcessBackend::from_command_line(&s[COMMAND_PREFIX.len()..])?)),
        s => {
            let dir = resolve_model_path(Path::new(s));
            if !dir.exists() {
                return usage(format!("split model {s:?} not found"));
            }
            Ok(Box::new(ToySeq2Seq::load(&dir, ModelKind::Split)?))
        }
    }
}

fn cmd_build_corpus(args: &BuildCorpusArgs, cfg: &RunConfig, workers: usize) -> CliResult<i32> {
    let mut a = merge(args, cfg.section("build_corpus"))?;
    let dump = existing(&a.dump, "dump")?;
    let out = required(&a.out, "out")?;
    let defaults = CorpusConfig::default();
    a.seed.get_or_insert(defaults.seed);
    a.quota.get_or_insert(defaults.buckets.quota);
    a.max_depth.get_or_insert(defaults.max_depth);
    a.splitter.get_or_insert("rule".into());
    a.coref.get_or_insert("heuristic".into());
    a.nli.get_or_insert("lexical".into());
    let corpus_cfg = CorpusConfig {
        seed: a.seed.unwrap(),
        buckets: LengthBuckets::with_quota(a.quota.unwrap()),
        dev_size: a.dev_size,
        test_size: a.test_size,
        max_depth: a.max_depth.unwrap(),
        workers,
    };
    let splitter = splitter_backend(a.splitter.as_deref().unwrap())?;
    let coref = coref_backend(a.coref.as_deref().unwrap())?;
    let nli = nli_backend(a.nli.as_deref().unwrap())?;
    create_out(&out)?;
    let backends = CorpusBackends {
        splitter: splitter.as_ref(),
        coref: coref.as_ref(),
        nli: nli.as_ref(),
    };
    let built = build_corpus(&dump, &corpus_cfg, &backends, Some(&out))?;
    log::info!(
        "corpus: {} paragraphs processed, retention {:.3}",
        built.stats.processed,
        built.stats.retention
    );
    write_run_record(&out, "build_corpus", &a, workers, &[dump])?;
    Ok(0)
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut c = match a.preset.as_deref().unwrap_or("toy") {
        "toy" => TrainConfig::toy(),
        "pretrained" => TrainConfig::pretrained(),
        p => return usage(format!("unknown preset {p:?} (use `toy` or `pretrained`)")),
    };
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.grad_accum {
        c.grad_accum = v;
    }
    if let Some(v) = a.warmup {
        c.warmup = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.validate()?;
    Ok(c)
}

fn model_dims(a: &TrainArgs) -> CliResult<ModelDims> {
    let d = ModelDims::default();
    let dims = ModelDims {
        hidden: a.hidden.unwrap_or(d.hidden),
        heads: a.heads.unwrap_or(d.heads),
        ff: a.ff.unwrap_or(d.ff),
        layers: a.layers.unwrap_or(d.layers),
        max_len: a.max_len.unwrap_or(d.max_len),
    };
    dims.validate()?;
    Ok(dims)
}

#[derive(Deserialize)]
struct SplitPair {
    source: String,
    target: String,
}

fn log_epoch(log: &mut Vec<EpochStats>) -> impl FnMut(&EpochStats) -> Control + '_ {
    move |s| {
        log::info!("epoch {} mean loss {:.5} over {} examples", s.epoch, s.mean_loss, s.examples);
        log.push(*s);
        Control::Continue
    }
}

fn cmd_train(args: &TrainArgs, cfg: &RunConfig, workers: usize) -> CliResult<i32> {
    let mut a = merge(args, cfg.section("train"))?;
    let corpus_path = existing(&a.corpus, "corpus")?;
    let out = required(&a.out, "out")?;
    let variant: Option<PcVariant> = match (a.which, a.variant.as_deref()) {
        (Which::Pc, None) => return usage("train pc requires --variant PC|PC_AGG|PC_ORD_AGG"),
        (Which::Pc, Some(v)) => Some(v.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?),
        (_, Some(_)) => return usage("--variant only applies to train pc"),
        (_, None) => None,
    };
    let tc = train_config(&a)?;
    let dims = model_dims(&a)?;
    let resume = a.resume.unwrap_or(false);
    if resume && read_manifest(&out).is_err() {
        return usage(format!("--resume given but {} holds no checkpoint", out.display()));
    }
    create_out(&out)?;
    let mut history = Vec::new();
    let mut on_epoch = log_epoch(&mut history);
    match a.which {
        Which::Sr => {
            let pairs: Vec<SplitPair> = crate::eval::read_jsonl(&corpus_path)?.into_iter().map(|(_, p)| p).collect();
            let mut m = if resume {
                ToySeq2Seq::load(&out, ModelKind::Split)?
            } else {
                let vocab = Vocab::build(pairs.iter().flat_map(|p| [&p.source, &p.target]));
                ToySeq2Seq::new(ModelKind::Split, vocab, dims, tc.seed)?
            };
            let remaining = tc.epochs.saturating_sub(m.epochs_completed());
            m.train(
                &tc,
                pairs.len(),
                remaining,
                |i, _| (pairs[i].source.clone(), pairs[i].target.clone()),
                |s, _| on_epoch(s),
            )?;
            m.save(&out)?;
        }
        Which::Ord => {
            let corpus = load_corpus(&corpus_path)?;
            let docs: Vec<Vec<String>> = corpus.iter().map(|c| c.sentences.clone()).collect();
            let mut m = if resume {
                PointerOrderer::load(&out)?
            } else {
                PointerOrderer::new(Vocab::build(docs.iter().flatten()), dims, tc.seed)?
            };
            let remaining = tc.epochs.saturating_sub(m.epochs_completed());
            m.train(&docs, &tc, remaining, |s, _| on_epoch(s))?;
            m.save(&out)?;
        }
        Which::Agg => {
            let corpus = load_corpus(&corpus_path)?;
            let ex: Vec<(Vec<String>, Delimiters)> = corpus.iter().map(|c| (c.sentences.clone(), c.agg_labels.clone())).collect();
            let mut m = if resume {
                ToyAggregator::load(&out)?
            } else {
                ToyAggregator::new(Vocab::build(ex.iter().flat_map(|(s, _)| s)), dims, tc.seed)?
            };
            let remaining = tc.epochs.saturating_sub(m.epochs_completed());
            m.fit_delimiters(&ex, &tc, remaining, |s, _| on_epoch(s))?;
            m.save(&out)?;
        }
        Which::Pc => {
            let corpus = load_corpus(&corpus_path)?;
            let variant = variant.expect("checked above");
            let mut m = if resume {
                let m = ToySeq2Seq::load(&out, ModelKind::Compression)?;
                if model_variant(&m)? != variant {
                    return usage(format!("checkpoint in {} was trained for another variant", out.display()));
                }
                m
            } else {
                let mut m = ToySeq2Seq::new(ModelKind::Compression, pc_vocab(&corpus), dims, tc.seed)?;
                m.set_tag(Some(variant.as_str().to_string()));
                m
            };
            let remaining = tc.epochs.saturating_sub(m.epochs_completed());
            m.train(
                &tc,
                corpus.len(),
                remaining,
                |i, rng| (pc_training_source(&corpus[i], variant, rng), corpus[i].paragraph.clone()),
                |s, _| on_epoch(s),
            )?;
            m.save(&out)?;
        }
    }
    drop(on_epoch);
    let mut log_text = String::new();
    for s in &history {
        log_text.push_str(&serde_json::to_string(s).map_err(Error::from)?);
        log_text.push('\n');
    }
    let log_path = out.join("train_log.jsonl");
    fs::write(&log_path, log_text).map_err(|e| Error::io(&log_path, e))?;
    a.preset.get_or_insert("toy".into());
    write_run_record(&out, "train", &a, workers, &[corpus_path])?;
    Ok(0)
}

fn cmd_generate(args: &GenerateArgs, cfg: &RunConfig, workers: usize) -> CliResult<i32> {
    let mut a = merge(args, cfg.section("generate"))?;
    let dataset = existing(&a.dataset, "dataset")?;
    let templates = existing(&a.templates, "templates")?;
    let out = required(&a.out, "out")?;
    let stages: Stages = required(&a.stages, "stages")?
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let corpus_variant = match a.corpus_variant.as_deref().unwrap_or("full") {
        "full" => CorpusVariant::Full,
        "filtered" => CorpusVariant::Filtered,
        v => return usage(format!("unknown corpus variant {v:?}")),
    };
    a.dataset_id.get_or_insert("default".into());
    a.seed.get_or_insert(0);
    let pc = PipelineConfig {
        stages,
        ord_model: a.ord_model.clone(),
        agg_model: a.agg_model.clone(),
        pc_model: a.pc_model.clone(),
        templates: templates.clone(),
        dataset_id: a.dataset_id.clone().unwrap(),
        corpus_variant,
        seed: a.seed.unwrap(),
    };
    let pipeline = Pipeline::load(&pc)?;
    create_out(&out)?;
    let summary = batch_generate(&dataset, &pipeline, &out.join("generations.jsonl"), workers)?;
    write_json(&out.join("summary.json"), &summary)?;
    log::info!("generated {}/{} records", summary.succeeded, summary.records);
    let mut inputs = vec![dataset, templates];
    inputs.extend(
        [&a.ord_model, &a.agg_model, &a.pc_model]
            .into_iter()
            .flatten()
            .filter(|s| !s.starts_with(COMMAND_PREFIX))
            .map(|s| resolve_model_path(Path::new(s))),
    );
    write_run_record(&out, "generate", &a, workers, &inputs)?;
    let failed = summary.records - summary.succeeded;
    Ok(if failed > 0 && !a.allow_errors.unwrap_or(false) {
        1
    } else {
        0
    })
}

#[derive(Deserialize)]
struct PlanLine {
    #[allow(dead_code)]
    id: String,
    predicted: Vec<usize>,
    gold: Vec<usize>,
    #[serde(default)]
    predicted_delimiters: Option<Delimiters>,
    #[serde(default)]
    gold_delimiters: Option<Delimiters>,
}

fn read_outputs(path: &Path) -> Result<Vec<SystemOutput>> {
    let mut outputs = Vec::new();
    for (line, v) in crate::eval::read_jsonl::<Value>(path)? {
        if v.get("error").is_some() {
            log::warn!("{}:{line}: skipping failed record {}", path.display(), v["id"]);
            continue;
        }
        outputs.push(serde_json::from_value(v).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?);
    }
    Ok(outputs)
}

fn cmd_evaluate(args: &EvaluateArgs, cfg: &RunConfig, workers: usize) -> CliResult<i32> {
    let mut a = merge(args, cfg.section("evaluate"))?;
    let out = required(&a.out, "out")?;
    let mode = *a.mode.get_or_insert(EvalMode::System);
    let seed = *a.seed.get_or_insert(0);
    let meteor: Option<Box<dyn MeteorScorer>> = match &a.meteor {
        Some(c) => Some(Box::new(CommandMeteor::from_command_line(c)?)),
        None => None,
    };
    let mut inputs = Vec::new();
    match mode {
        EvalMode::System => {
            let outputs_path = existing(&a.outputs, "outputs")?;
            let refs_path = existing(&a.references, "references")?;
            let semantic = a.semantic.unwrap_or(a.nli.is_some());
            if semantic && a.nli.is_none() {
                return Err(Error::Capability("semantic metrics need an entailment backend (--nli)".into()).into());
            }
            let nli = match (&a.nli, semantic) {
                (Some(s), true) => Some(nli_backend(s)?),
                _ => None,
            };
            let outputs = read_outputs(&outputs_path)?;
            let references = align(&outputs, &load_references(&refs_path)?)?;
            create_out(&out)?;
            let tag = a.system_tag.get_or_insert_with(|| outputs_path.display().to_string()).clone();
            let settings = EvalSettings {
                system_tag: tag,
                nli: nli.as_deref(),
                meteor: meteor.as_deref(),
                details: a.details.unwrap_or(false).then(|| out.join("details.tsv")),
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            let (report, _) = pool.install(|| evaluate_system(&outputs, &references, &settings))?;
            write_json(&out.join("report.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            inputs.extend([outputs_path, refs_path]);
        }
        EvalMode::Plans => {
            let plans_path = existing(&a.plans, "plans")?;
            let lines: Vec<PlanLine> = crate::eval::read_jsonl(&plans_path)?.into_iter().map(|(_, l)| l).collect();
            let predicted: Vec<Vec<usize>> = lines.iter().map(|l| l.predicted.clone()).collect();
            let gold: Vec<Vec<usize>> = lines.iter().map(|l| l.gold.clone()).collect();
            let mut rng = substream(seed, "random-plan-baseline");
            let random: Vec<Vec<usize>> = gold
                .iter()
                .map(|g| {
                    let mut p: Vec<usize> = (0..g.len()).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            let mut report = serde_json::json!({
                "n_examples": lines.len(),
                "ordering": eval_ordering(&predicted, &gold)?,
                "random_ordering": eval_ordering(&random, &gold)?,
            });
            let delims: Option<(Vec<Delimiters>, Vec<Delimiters>)> = lines
                .iter()
                .map(|l| Some((l.predicted_delimiters.clone()?, l.gold_delimiters.clone()?)))
                .collect::<Option<Vec<_>>>()
                .map(|v| v.into_iter().unzip());
            if let Some((p, g)) = delims {
                report["aggregation"] = serde_json::to_value(eval_aggregation(&p, &g)?).map_err(Error::from)?;
            }
            create_out(&out)?;
            write_json(&out.join("plan_report.json"), &report)?;
            let o = &report["ordering"];
            let r = &report["random_ordering"];
            println!(
                "system  B-2 {:.2}  Acc {:.2}",
                o["bleu2"].as_f64().unwrap_or(0.0),
                o["accuracy"].as_f64().unwrap_or(0.0)
            );
            println!(
                "random  B-2 {:.2}  Acc {:.2}",
                r["bleu2"].as_f64().unwrap_or(0.0),
                r["accuracy"].as_f64().unwrap_or(0.0)
            );
            inputs.push(plans_path);
        }
        EvalMode::Intrinsic => {
            let corpus_path = existing(&a.corpus, "corpus")?;
            let test = load_corpus(&corpus_path)?;
            let load_dir = |s: &Option<String>| -> CliResult<Option<PathBuf>> {
                match s {
                    None => Ok(None),
                    Some(s) => {
                        let d = resolve_model_path(Path::new(s));
                        if !d.exists() {
                            return usage(format!("model {s:?} not found"));
                        }
                        Ok(Some(d))
                    }
                }
            };
            let ord = load_dir(&a.ord_model)?.map(|d| PointerOrderer::load(&d)).transpose()?;
            let agg = load_dir(&a.agg_model)?.map(|d| ToyAggregator::load(&d)).transpose()?;
            let pc = load_dir(&a.pc_model)?
                .map(|d| ToySeq2Seq::load(&d, ModelKind::Compression))
                .transpose()?;
            let pc = match pc {
                Some(m) => {
                    let v = model_variant(&m)?;
                    Some((m, v))
                }
                None => None,
            };
            let models = IntrinsicModels {
                orderer: ord.as_ref().map(|m| m as &dyn FactOrderer),
                aggregator: agg.as_ref().map(|m| m as &dyn DelimiterPredictor),
                compressor: pc.as_ref().map(|(m, v)| (m as &dyn TextGenerator, *v)),
                meteor: meteor.as_deref(),
            };
            let report = intrinsic_eval(&test, &models, seed)?;
            create_out(&out)?;
            write_json(&out.join("intrinsic.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            inputs.push(corpus_path);
            inputs.extend(
                [&a.ord_model, &a.agg_model, &a.pc_model]
                    .into_iter()
                    .flatten()
                    .map(|s| resolve_model_path(Path::new(s))),
            );
        }
    }
    write_run_record(&out, "evaluate", &a, workers, &inputs)?;
    Ok(0)
}

fn cmd_copy_baseline(args: &CopyBaselineArgs, cfg: &RunConfig, workers: usize) -> CliResult<i32> {
    let mut a = merge(args, cfg.section("copy_baseline"))?;
    let dataset = existing(&a.dataset, "dataset")?;
    let templates = existing(&a.templates, "templates")?;
    let out = required(&a.out, "out")?;
    let dataset_id = a.dataset_id.get_or_insert("default".into()).clone();
    let registry = load_templates(&templates, &dataset_id)?;
    create_out(&out)?;
    let mut text = String::new();
    let mut errors = BTreeMap::<String, usize>::new();
    for (i, rec) in read_dataset(&dataset)?.into_iter().enumerate() {
        let (id, result) = match rec {
            Err(e) => (format!("line-{}", i + 1), Err(e)),
            Ok(r) => {
                let result = r.triples().and_then(|t| realize_all(&t, &registry));
                (r.id, result)
            }
        };
        let line = match result {
            Ok(facts) => {
                let output = facts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join(" ");
                serde_json::to_value(SystemOutput { id, output, facts }).map_err(Error::from)?
            }
            Err(e) => {
                *errors.entry("realize".into()).or_default() += 1;
                serde_json::json!({"id": id, "stage": "realize", "error": e.to_string()})
            }
        };
        text.push_str(&line.to_string());
        text.push('\n');
    }
    let path = out.join("generations.jsonl");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_run_record(&out, "copy_baseline", &a, workers, &[dataset, templates])?;
    Ok(if errors.is_empty() { 0 } else { 1 })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = RunConfig::load(cli.config.as_deref()).and_then(|cfg| {
        let workers = cfg.workers(cli.workers);
        match &cli.command {
            Command::BuildCorpus(a) => cmd_build_corpus(a, &cfg, workers),
            Command::Train(a) => cmd_train(a, &cfg, workers),
            Command::Generate(a) => cmd_generate(a, &cfg, workers),
            Command::Evaluate(a) => cmd_evaluate(a, &cfg, workers),
            Command::CopyBaseline(a) => cmd_copy_baseline(a, &cfg, workers),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args`, sets up stderr logging and runs.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    run(cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let table: toml::Table = "seed = 5\nquota = 7\nnli = \"lexical\"".parse().unwrap();
        let flags = BuildCorpusArgs {
            dump: Some("d.jsonl".into()),
            out: None,
            seed: Some(9),
            quota: None,
            dev_size: None,
            test_size: None,
            max_depth: None,
            splitter: None,
            coref: None,
            nli: None,
        };
        let m = merge(&flags, Some(&table)).unwrap();
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.quota, Some(7));
        assert_eq!(m.nli.as_deref(), Some("lexical"));
        assert_eq!(m.dump, Some(PathBuf::from("d.jsonl")));
    }

    #[test]
    fn pc_needs_variant() {
        let code = main_with_args(["d2t", "train", "pc", "--corpus", "Cargo.toml", "--out", "/nonexistent/x"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_input_is_usage_error() {
        let code = main_with_args(["d2t", "build-corpus", "--dump", "/nonexistent/dump.jsonl", "--out", "/tmp/x"]);
        assert_eq!(code, 2);
        assert_eq!(main_with_args(["d2t", "frobnicate"]), 2);
    }
}
