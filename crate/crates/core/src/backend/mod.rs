//! Contracts for every learned component, plus the shared training and
//! checkpoint machinery of the from-scratch ("toy") tier.
//!
//! The pipeline only talks to the traits in this module. A toy model, the
//! lexical entailment heuristic and an external process wrapping a
//! pretrained checkpoint are interchangeable behind them.

mod lexical;
mod process;
mod toy;

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use d2t_nn::{Adam, AdamConfig, Gradients, ParamStore, TransformerConfig};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::text::tokenize;

pub use lexical::LexicalEntailment;
pub use process::ProcessBackend;
pub(crate) use toy::resume_optimizer;
pub use toy::{EncoderView, LabeledTokens, ToySeq2Seq, ToyTokenClassifier};

/// Environment variable naming the directory relative checkpoint paths are
/// resolved against.
pub const MODEL_DIR_ENV: &str = "D2T_MODEL_DIR";

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;

/// Produces one `hidden_size` state per input token.
pub trait SequenceEncoder: Send + Sync {
    fn hidden_size(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, tokens: &[String]) -> Result<Array2<f64>>;
}

/// Token-level sequence-to-sequence model with greedy decoding.
pub trait ConditionalGenerator: Send + Sync {
    fn max_input_len(&self) -> usize;
    fn max_output_len(&self) -> usize;
    /// Output tokens, without the end marker.
    fn generate(&self, tokens: &[String]) -> Result<Vec<String>>;
}

/// Text-in, text-out generation (paragraph compression, sentence splitting).
pub trait TextGenerator: Send + Sync {
    fn generate_text(&self, input: &str) -> Result<String>;
}

/// Two-class distribution per input position.
pub trait TokenClassifier: Send + Sync {
    fn max_len(&self) -> usize;
    fn classify(&self, tokens: &[String]) -> Result<Array2<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];
}

pub trait EntailmentClassifier: Send + Sync {
    /// Probabilities in [`NliLabel::ALL`] order.
    fn probabilities(&self, premise: &str, hypothesis: &str) -> Result<[f64; 3]>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NliOutput {
    pub label: NliLabel,
    pub probs: [f64; 3],
}

impl NliOutput {
    pub fn is_entailment(&self) -> bool {
        self.label == NliLabel::Entailment
    }
}

pub fn entails(nli: &dyn EntailmentClassifier, premise: &str, hypothesis: &str) -> Result<NliOutput> {
    if premise.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(Error::Input("entailment needs a non-empty premise and hypothesis".into()));
    }
    let probs = nli.probabilities(premise, hypothesis)?;
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::Backend(format!(
            "entailment probabilities {probs:?} are not a distribution"
        )));
    }
    let mut best = 0;
    for i in 1..3 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    Ok(NliOutput {
        label: NliLabel::ALL[best],
        probs,
    })
}

/// Optimiser and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of all optimiser steps spent on linear warmup.
    pub warmup: f64,
    /// Decay linearly to zero over the planned number of steps.
    pub linear_decay: bool,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrained()
    }
}

impl TrainConfig {
    /// Fine-tuning settings for pretrained checkpoints.
    pub fn pretrained() -> Self {
        TrainConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.997,
            eps: 1e-9,
            warmup: 0.1,
            linear_decay: true,
            batch_size: 8,
            grad_accum: 4,
            epochs: 1,
            seed: 0,
            clip_norm: None,
        }
    }

    /// Settings for small models trained from scratch.
    pub fn toy() -> Self {
        TrainConfig {
            lr: 1e-3,
            warmup: 0.0,
            linear_decay: false,
            batch_size: 4,
            grad_accum: 1,
            epochs: 100,
            clip_norm: Some(1.0),
            ..Self::pretrained()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return bad("lr and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return bad("warmup must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.grad_accum == 0 || self.epochs == 0 {
            return bad("batch_size, grad_accum and epochs must be positive");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn examples_per_step(&self) -> usize {
        self.batch_size * self.grad_accum
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.examples_per_step()) as u64
    }

    pub(crate) fn optimizer(&self, n: usize, store: &ParamStore) -> Adam {
        Adam::new(
            AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                warmup: self.warmup,
                total_steps: (self.linear_decay || self.warmup > 0.0).then(|| self.steps_per_epoch(n) * self.epochs as u64),
                clip_norm: self.clip_norm,
            },
            store,
        )
    }
}

/// Transformer sizes of a toy model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub layers: usize,
    pub max_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            hidden: 64,
            heads: 4,
            ff: 128,
            layers: 2,
            max_len: 512,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.layers == 0 || self.ff == 0 || self.max_len < 2 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            hidden: self.hidden,
            heads: self.heads,
            ff: self.ff,
            layers: self.layers,
            max_len: self.max_len,
        }
    }
}

/// Word-level token inventory. Ids 0..5 are the reserved markers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Markers followed by every distinct token of `texts`, sorted.
    pub fn build<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = BTreeSet::new();
        for t in texts {
            words.extend(tokenize(t.as_ref()));
        }
        let mut tokens: Vec<String> = crate::text::SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            words
                .into_iter()
                .filter(|w| !crate::text::SPECIAL_TOKENS.contains(&w.as_str())),
        );
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.tokens.join("\n").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loss summary of one pass over the training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub examples: usize,
}

/// Early-stopping signal returned by training monitors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Minibatch gradient descent over one epoch.
///
/// `loss` returns `None` for examples that carry no training signal. Its
/// RNG is derived from `(seed, epoch)` alone, so training resumed from a
/// checkpoint replays exactly what an uninterrupted run would do.
pub(crate) fn fit_epoch<F>(
    store: &mut ParamStore,
    adam: &mut Adam,
    cfg: &TrainConfig,
    epoch: usize,
    n: usize,
    loss: F,
) -> Result<EpochStats>
where
    F: Fn(&ParamStore, usize, &mut ChaCha8Rng) -> Result<Option<(f64, Gradients)>>,
{
    let mut rng = substream(cfg.seed, &format!("train-epoch-{epoch}"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut total = 0.0;
    let mut counted = 0;
    for chunk in order.chunks(cfg.examples_per_step()) {
        let mut acc = Gradients::zeros_like(store);
        let mut in_batch = 0;
        for &i in chunk {
            if let Some((l, g)) = loss(store, i, &mut rng)? {
                acc.merge(g);
                total += l;
                in_batch += 1;
            }
        }
        if in_batch > 0 {
            acc.scale(1.0 / in_batch as f64);
            adam.step(store, &acc);
            counted += in_batch;
        }
    }
    Ok(EpochStats {
        epoch,
        mean_loss: if counted > 0 { total / counted as f64 } else { 0.0 },
        examples: counted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ordering,
    Aggregation,
    Compression,
    Split,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Ordering => "ordering",
            ModelKind::Aggregation => "aggregation",
            ModelKind::Compression => "compression",
            ModelKind::Split => "split",
        })
    }
}

/// `manifest.json` of a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub tier: String,
    pub vocab_hash: String,
    pub hidden_size: usize,
    pub dims: ModelDims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc_variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub epochs_completed: usize,
}

/// Everything a toy model persists.
pub(crate) struct Checkpoint {
    pub manifest: Manifest,
    pub vocab: Vocab,
}

const MANIFEST: &str = "manifest.json";
const VOCAB: &str = "vocab.json";
const WEIGHTS: &str = "weights.bin";
const OPTIMIZER: &str = "optimizer.bin";

/// Resolves a checkpoint path: relative paths that do not exist locally
/// are looked up under `$D2T_MODEL_DIR`.
pub fn resolve_model_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(root) = std::env::var_os(MODEL_DIR_ENV) {
            return Path::new(&root).join(path);
        }
    }
    path.to_path_buf()
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub(crate) fn save_checkpoint(
    dir: &Path,
    manifest: &Manifest,
    vocab: &Vocab,
    store: &ParamStore,
    adam: Option<&Adam>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(MANIFEST), manifest)?;
    write_json(&dir.join(VOCAB), vocab)?;
    let path = dir.join(WEIGHTS);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    store.write_to(BufWriter::new(f))?;
    let path = dir.join(OPTIMIZER);
    match adam {
        Some(adam) => {
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            adam.write_to(BufWriter::new(f))?;
        }
        None if path.exists() => fs::remove_file(&path).map_err(|e| Error::io(&path, e))?,
        None => {}
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads manifest and vocabulary and checks they agree with `expected`.
pub(crate) fn read_checkpoint_header(dir: &Path, expected: ModelKind) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| ckpt_err(dir, format!("manifest: {e}")))?;
    if manifest.kind != expected {
        return Err(ckpt_err(dir, format!("holds a {} model, expected {expected}", manifest.kind)));
    }
    if manifest.tier != "toy" {
        return Err(ckpt_err(dir, format!("tier {:?} cannot be loaded in-process", manifest.tier)));
    }
    manifest.dims.validate()?;
    let path = dir.join(VOCAB);
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let vocab: Vocab = serde_json::from_str(&raw).map_err(|e| ckpt_err(dir, format!("vocab: {e}")))?;
    if vocab.hash() != manifest.vocab_hash {
        return Err(ckpt_err(dir, "vocabulary hash does not match manifest"));
    }
    Ok(Checkpoint { manifest, vocab })
}

/// Only reads the manifest; used to validate configurations cheaply.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&raw).map_err(|e| ckpt_err(dir, format!("manifest: {e}")))
}

pub(crate) fn read_weights(dir: &Path, store: &mut ParamStore) -> Result<()> {
    let path = dir.join(WEIGHTS);
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    store.read_into(BufReader::new(f)).map_err(|e| ckpt_err(dir, e.to_string()))
}

/// Restores optimiser moments when the checkpoint has them.
pub(crate) fn read_optimizer(dir: &Path, adam: &mut Adam) -> Result<bool> {
    let path = dir.join(OPTIMIZER);
    if !path.exists() {
        return Ok(false);
    }
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    adam.read_from(BufReader::new(f)).map_err(|e| ckpt_err(dir, e.to_string()))?;
    Ok(true)
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
