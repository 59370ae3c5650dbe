//! From-scratch transformer models: an encoder-decoder generator and a
//! token classifier.

use std::path::Path;

use d2t_nn::{Decoder, Encoder, Gradients, Graph, Linear, ParamStore};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{
    argmax, fit_epoch, read_checkpoint_header, read_optimizer, read_weights, save_checkpoint, ConditionalGenerator, Control,
    EpochStats, Manifest, ModelDims, ModelKind, SequenceEncoder, TextGenerator, TokenClassifier, TrainConfig, Vocab, BOS, EOS,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::text::{detokenize, tokenize};

const MAX_TARGET: usize = 512;

fn check_len(len: usize, max: usize) -> Result<()> {
    if len > max {
        Err(Error::Length { len, max })
    } else {
        Ok(())
    }
}

/// Read-only encoder over an existing parameter store.
pub struct EncoderView<'a> {
    pub(crate) store: &'a ParamStore,
    pub(crate) encoder: &'a Encoder,
    pub(crate) vocab: &'a Vocab,
    pub(crate) dims: ModelDims,
}

impl SequenceEncoder for EncoderView<'_> {
    fn hidden_size(&self) -> usize {
        self.dims.hidden
    }

    fn max_len(&self) -> usize {
        self.dims.max_len
    }

    fn encode(&self, tokens: &[String]) -> Result<Array2<f64>> {
        check_len(tokens.len(), self.dims.max_len)?;
        let ids = self.vocab.encode(tokens);
        let mut g = Graph::new(self.store);
        let h = self.encoder.forward(&mut g, &ids);
        Ok(g.value(h).clone())
    }
}

/// Reuses saved moments when the configuration is unchanged; the schedule
/// is re-planned for the current corpus size either way.
pub(crate) fn resume_optimizer(
    saved: Option<(TrainConfig, d2t_nn::Adam)>,
    cfg: &TrainConfig,
    n: usize,
    store: &ParamStore,
) -> d2t_nn::Adam {
    let fresh = cfg.optimizer(n, store);
    match saved {
        Some((c, mut adam)) if &c == cfg => {
            adam.config = fresh.config;
            adam
        }
        _ => fresh,
    }
}

#[derive(Clone, Debug)]
struct Seq2SeqNet {
    encoder: Encoder,
    decoder: Decoder,
    out: Linear,
}

/// Encoder-decoder transformer with greedy decoding.
pub struct ToySeq2Seq {
    kind: ModelKind,
    store: ParamStore,
    net: Seq2SeqNet,
    vocab: Vocab,
    dims: ModelDims,
    max_output: usize,
    tag: Option<String>,
    train: Option<(TrainConfig, d2t_nn::Adam)>,
    epochs_completed: usize,
}

impl ToySeq2Seq {
    pub fn new(kind: ModelKind, vocab: Vocab, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = substream(seed, "init-seq2seq");
        let mut store = ParamStore::new();
        let cfg = dims.transformer();
        let net = Seq2SeqNet {
            encoder: Encoder::new(&mut store, "enc", vocab.len(), &cfg, &mut rng),
            decoder: Decoder::new(&mut store, "dec", vocab.len(), &cfg, &mut rng),
            out: Linear::new(&mut store, "out", dims.hidden, vocab.len(), &mut rng),
        };
        Ok(ToySeq2Seq {
            kind,
            store,
            net,
            vocab,
            dims,
            max_output: MAX_TARGET.min(dims.max_len - 1),
            tag: None,
            train: None,
            epochs_completed: 0,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    /// Free-form label persisted in the manifest (the PC variant).
    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn set_tag(&mut self, tag: Option<String>) {
        self.tag = tag;
    }

    /// Lowers the decoding cap (never above the position table).
    pub fn with_max_output(mut self, max_output: usize) -> Self {
        self.max_output = max_output.clamp(1, self.dims.max_len - 1);
        self
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn ids(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(&tokenize(text))
    }

    fn loss(net: &Seq2SeqNet, store: &ParamStore, src: &[usize], tgt: &[usize]) -> (f64, Gradients) {
        let mut g = Graph::new(store);
        let memory = net.encoder.forward(&mut g, src);
        let mut dec_in = Vec::with_capacity(tgt.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(tgt);
        let h = net.decoder.forward(&mut g, &dec_in, memory);
        let logits = net.out.forward(&mut g, h);
        let targets: Vec<Option<usize>> = tgt.iter().copied().chain(Some(EOS)).map(Some).collect();
        let loss = g.cross_entropy(logits, &targets);
        (g.scalar(loss), g.backward(loss))
    }

    /// Mean token cross-entropy and gradients of one (source, target) pair.
    pub fn loss_and_grads(&self, source: &str, target: &str) -> Result<(f64, Gradients)> {
        let (src, tgt) = (self.ids(source), self.ids(target));
        check_len(src.len(), self.dims.max_len)?;
        check_len(tgt.len() + 1, self.dims.max_len)?;
        Ok(Self::loss(&self.net, &self.store, &src, &tgt))
    }

    /// Runs `epochs` more epochs over `n` pairs produced by `pair`, which
    /// receives the epoch RNG (used for per-epoch input reshuffling).
    pub fn train<P, M>(&mut self, cfg: &TrainConfig, n: usize, epochs: usize, pair: P, mut monitor: M) -> Result<Vec<EpochStats>>
    where
        P: Fn(usize, &mut ChaCha8Rng) -> (String, String),
        M: FnMut(&EpochStats, &Self) -> Control,
    {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::Input("cannot train on an empty corpus".into()));
        }
        let mut adam = resume_optimizer(self.train.take(), cfg, n, &self.store);
        let mut history = Vec::new();
        let max_len = self.dims.max_len;
        for _ in 0..epochs {
            let epoch = self.epochs_completed;
            let net = &self.net;
            let vocab = &self.vocab;
            let stats = fit_epoch(&mut self.store, &mut adam, cfg, epoch, n, |store, i, rng| {
                let (s, t) = pair(i, rng);
                let src = vocab.encode(&tokenize(&s));
                let tgt = vocab.encode(&tokenize(&t));
                check_len(src.len(), max_len)?;
                check_len(tgt.len() + 1, max_len)?;
                Ok(Some(Self::loss(net, store, &src, &tgt)))
            });
            let stats = match stats {
                Ok(s) => s,
                Err(e) => {
                    self.train = Some((cfg.clone(), adam));
                    return Err(e);
                }
            };
            self.epochs_completed += 1;
            log::debug!("{} epoch {} loss {:.4}", self.kind, stats.epoch, stats.mean_loss);
            history.push(stats);
            if monitor(&stats, self) == Control::Stop {
                break;
            }
        }
        self.train = Some((cfg.clone(), adam));
        Ok(history)
    }

    fn decode_ids(&self, src: &[usize]) -> Vec<usize> {
        let memory = {
            let mut g = Graph::new(&self.store);
            let m = self.net.encoder.forward(&mut g, src);
            g.value(m).clone()
        };
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        while out.len() < self.max_output {
            let mut g = Graph::new(&self.store);
            let mem = g.constant(memory.clone());
            let h = self.net.decoder.forward(&mut g, &prefix, mem);
            let last = g.select_rows(h, &[prefix.len() - 1]);
            let logits = self.net.out.forward(&mut g, last);
            let next = argmax(g.value(logits).row(0).iter().copied());
            if next == EOS {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            kind: self.kind,
            tier: "toy".into(),
            vocab_hash: self.vocab.hash(),
            hidden_size: self.dims.hidden,
            dims: self.dims,
            pc_variant: self.tag.clone(),
            train_config: self.train.as_ref().map(|(c, _)| c.clone()),
            epochs_completed: self.epochs_completed,
        };
        save_checkpoint(dir, &manifest, &self.vocab, &self.store, self.train.as_ref().map(|(_, a)| a))
    }

    pub fn load(dir: &Path, kind: ModelKind) -> Result<Self> {
        let ckpt = read_checkpoint_header(dir, kind)?;
        let mut model = ToySeq2Seq::new(kind, ckpt.vocab, ckpt.manifest.dims, 0)?;
        read_weights(dir, &mut model.store)?;
        model.tag = ckpt.manifest.pc_variant;
        model.epochs_completed = ckpt.manifest.epochs_completed;
        if let Some(cfg) = ckpt.manifest.train_config {
            let mut adam = cfg.optimizer(1, &model.store);
            if read_optimizer(dir, &mut adam)? {
                model.train = Some((cfg, adam));
            }
        }
        Ok(model)
    }
}

impl ConditionalGenerator for ToySeq2Seq {
    fn max_input_len(&self) -> usize {
        self.dims.max_len
    }

    fn max_output_len(&self) -> usize {
        self.max_output
    }

    fn generate(&self, tokens: &[String]) -> Result<Vec<String>> {
        check_len(tokens.len(), self.dims.max_len)?;
        let src = self.vocab.encode(tokens);
        Ok(self.vocab.decode(&self.decode_ids(&src)))
    }
}

impl TextGenerator for ToySeq2Seq {
    fn generate_text(&self, input: &str) -> Result<String> {
        let out = self.generate(&tokenize(input))?;
        Ok(detokenize(&out))
    }
}

#[derive(Clone, Debug)]
struct ClassifierNet {
    encoder: Encoder,
    head: Linear,
}

/// Transformer encoder with a two-way classification head per token.
pub struct ToyTokenClassifier {
    store: ParamStore,
    net: ClassifierNet,
    vocab: Vocab,
    dims: ModelDims,
    train: Option<(TrainConfig, d2t_nn::Adam)>,
    epochs_completed: usize,
}

/// One training sequence: token strings plus an optional label per position.
pub type LabeledTokens = (Vec<String>, Vec<Option<usize>>);

impl ToyTokenClassifier {
    pub fn new(vocab: Vocab, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = substream(seed, "init-classifier");
        let mut store = ParamStore::new();
        let cfg = dims.transformer();
        let net = ClassifierNet {
            encoder: Encoder::new(&mut store, "enc", vocab.len(), &cfg, &mut rng),
            head: Linear::new(&mut store, "cls", dims.hidden, 2, &mut rng),
        };
        Ok(ToyTokenClassifier {
            store,
            net,
            vocab,
            dims,
            train: None,
            epochs_completed: 0,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    fn loss(net: &ClassifierNet, store: &ParamStore, ids: &[usize], labels: &[Option<usize>]) -> Option<(f64, Gradients)> {
        if labels.iter().all(Option::is_none) {
            return None;
        }
        let mut g = Graph::new(store);
        let h = net.encoder.forward(&mut g, ids);
        let logits = net.head.forward(&mut g, h);
        let loss = g.cross_entropy(logits, labels);
        Some((g.scalar(loss), g.backward(loss)))
    }

    pub fn train<P, M>(
        &mut self,
        cfg: &TrainConfig,
        n: usize,
        epochs: usize,
        example: P,
        mut monitor: M,
    ) -> Result<Vec<EpochStats>>
    where
        P: Fn(usize, &mut ChaCha8Rng) -> Result<LabeledTokens>,
        M: FnMut(&EpochStats, &Self) -> Control,
    {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::Input("cannot train on an empty corpus".into()));
        }
        let mut adam = resume_optimizer(self.train.take(), cfg, n, &self.store);
        let mut history = Vec::new();
        let max_len = self.dims.max_len;
        for _ in 0..epochs {
            let epoch = self.epochs_completed;
            let net = &self.net;
            let vocab = &self.vocab;
            let stats = fit_epoch(&mut self.store, &mut adam, cfg, epoch, n, |store, i, rng| {
                let (tokens, labels) = example(i, rng)?;
                check_len(tokens.len(), max_len)?;
                if labels.len() != tokens.len() {
                    return Err(Error::CorruptExample(format!(
                        "{} labels for {} tokens",
                        labels.len(),
                        tokens.len()
                    )));
                }
                Ok(Self::loss(net, store, &vocab.encode(&tokens), &labels))
            });
            let stats = match stats {
                Ok(s) => s,
                Err(e) => {
                    self.train = Some((cfg.clone(), adam));
                    return Err(e);
                }
            };
            self.epochs_completed += 1;
            log::debug!("classifier epoch {} loss {:.4}", stats.epoch, stats.mean_loss);
            history.push(stats);
            if monitor(&stats, self) == Control::Stop {
                break;
            }
        }
        self.train = Some((cfg.clone(), adam));
        Ok(history)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            kind: ModelKind::Aggregation,
            tier: "toy".into(),
            vocab_hash: self.vocab.hash(),
            hidden_size: self.dims.hidden,
            dims: self.dims,
            pc_variant: None,
            train_config: self.train.as_ref().map(|(c, _)| c.clone()),
            epochs_completed: self.epochs_completed,
        };
        save_checkpoint(dir, &manifest, &self.vocab, &self.store, self.train.as_ref().map(|(_, a)| a))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = read_checkpoint_header(dir, ModelKind::Aggregation)?;
        let mut model = ToyTokenClassifier::new(ckpt.vocab, ckpt.manifest.dims, 0)?;
        read_weights(dir, &mut model.store)?;
        model.epochs_completed = ckpt.manifest.epochs_completed;
        if let Some(cfg) = ckpt.manifest.train_config {
            let mut adam = cfg.optimizer(1, &model.store);
            if read_optimizer(dir, &mut adam)? {
                model.train = Some((cfg, adam));
            }
        }
        Ok(model)
    }

    pub fn encoder_view(&self) -> EncoderView<'_> {
        EncoderView {
            store: &self.store,
            encoder: &self.net.encoder,
            vocab: &self.vocab,
            dims: self.dims,
        }
    }
}

impl TokenClassifier for ToyTokenClassifier {
    fn max_len(&self) -> usize {
        self.dims.max_len
    }

    fn classify(&self, tokens: &[String]) -> Result<Array2<f64>> {
        check_len(tokens.len(), self.dims.max_len)?;
        if tokens.is_empty() {
            return Ok(Array2::zeros((0, 2)));
        }
        let ids = self.vocab.encode(tokens);
        let mut g = Graph::new(&self.store);
        let h = self.net.encoder.forward(&mut g, &ids);
        let logits = self.net.head.forward(&mut g, h);
        Ok(d2t_nn::softmax_rows(g.value(logits)))
    }
}
