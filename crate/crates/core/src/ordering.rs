//! Fact ordering with a pointer network over encoder end-token states.

use std::path::Path;

use d2t_nn::{Decoder, Encoder, Gradients, Graph, ParamId, ParamStore};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{
    fit_epoch, read_checkpoint_header, read_optimizer, read_weights, save_checkpoint, Control, EncoderView, EpochStats, Manifest,
    ModelDims, ModelKind, SequenceEncoder, TrainConfig, Vocab, BOS, EOS,
};
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};
use crate::eval::bleu_tokens;
use crate::facts::{is_permutation, Fact};
use crate::rng::substream;
use crate::text::tokenize;

/// Anything that can put a fact set in order.
pub trait FactOrderer: Send + Sync {
    fn order(&self, facts: &[Fact]) -> Result<Vec<usize>>;
}

/// Orders `facts` and checks the result is a permutation.
pub fn order_facts(facts: &[Fact], model: &dyn FactOrderer) -> Result<Vec<usize>> {
    if facts.is_empty() {
        return Err(Error::Input("cannot order an empty fact set".into()));
    }
    if facts.len() == 1 {
        return Ok(vec![0]);
    }
    let order = model.order(facts)?;
    if order.len() != facts.len() || !is_permutation(&order) {
        return Err(Error::Contract(format!(
            "orderer returned {order:?} for {} facts",
            facts.len()
        )));
    }
    Ok(order)
}

/// Keeps the input order; the identity baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityOrderer;

impl FactOrderer for IdentityOrderer {
    fn order(&self, facts: &[Fact]) -> Result<Vec<usize>> {
        Ok((0..facts.len()).collect())
    }
}

/// `<s> f1 </s> <s> f2 </s> ...` plus the index of every `</s>`.
pub fn fact_sequence_tokens<S: AsRef<str>>(facts: &[S]) -> (Vec<String>, Vec<usize>) {
    let mut tokens = Vec::new();
    let mut ends = Vec::with_capacity(facts.len());
    for f in facts {
        tokens.push("<s>".to_string());
        tokens.extend(tokenize(f.as_ref()));
        ends.push(tokens.len());
        tokens.push("</s>".to_string());
    }
    (tokens, ends)
}

/// Encoder states at each fact's `</s>`, one row per fact.
pub fn encode_fact_sequence(facts: &[Fact], encoder: &dyn SequenceEncoder) -> Result<Array2<f64>> {
    if facts.is_empty() {
        return Err(Error::Input("cannot encode an empty fact set".into()));
    }
    let texts: Vec<&str> = facts.iter().map(|f| f.text.as_str()).collect();
    let (tokens, ends) = fact_sequence_tokens(&texts);
    if tokens.len() > encoder.max_len() {
        return Err(Error::Length {
            len: tokens.len(),
            max: encoder.max_len(),
        });
    }
    let states = encoder.encode(&tokens)?;
    Ok(states.select(Axis(0), &ends))
}

/// Query and key projections of the pointer attention.
#[derive(Clone, Debug, PartialEq)]
pub struct PointerHead {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
}

impl PointerHead {
    pub fn new(w_q: Array2<f64>, w_k: Array2<f64>) -> Result<Self> {
        let b = w_q.nrows();
        if w_q.dim() != (b, b) || w_k.dim() != (b, b) {
            return Err(Error::Contract(format!(
                "pointer projections must be square and equal, got {:?} and {:?}",
                w_q.dim(),
                w_k.dim()
            )));
        }
        Ok(PointerHead { w_q, w_k })
    }

    pub fn identity(b: usize) -> Self {
        PointerHead {
            w_q: Array2::eye(b),
            w_k: Array2::eye(b),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_q.nrows()
    }
}

/// Selection distribution for one decoding step.
///
/// `probs` has one entry per fact followed by the reserved bootstrap slot,
/// which is always masked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointerDistribution {
    pub step: usize,
    pub probs: Vec<f64>,
}

impl PointerDistribution {
    pub fn fact_probs(&self) -> &[f64] {
        &self.probs[..self.probs.len() - 1]
    }

    /// Most probable fact; lowest index on ties.
    pub fn argmax(&self) -> usize {
        crate::backend::argmax(self.fact_probs().iter().copied())
    }
}

/// Scaled dot-product logits `(d W_Q)(E W_K)ᵀ / √b` for every fact slot.
pub fn pointer_logits(d: ArrayView1<f64>, e: &Array2<f64>, head: &PointerHead) -> Result<Array1<f64>> {
    let b = head.hidden_size();
    if d.len() != b || e.ncols() != b {
        return Err(Error::Contract(format!(
            "state width {} and fact states {:?} do not match hidden size {b}",
            d.len(),
            e.dim()
        )));
    }
    let q = d.dot(&head.w_q);
    let k = e.dot(&head.w_k);
    Ok(k.dot(&q) / (b as f64).sqrt())
}

/// One pointer step: softmax over the unmasked fact slots.
pub fn pointer_step(
    d: ArrayView1<f64>,
    e: &Array2<f64>,
    head: &PointerHead,
    mask: &[bool],
    step: usize,
) -> Result<PointerDistribution> {
    if mask.len() != e.nrows() {
        return Err(Error::Contract(format!(
            "mask has {} slots for {} facts",
            mask.len(),
            e.nrows()
        )));
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::Contract("every pointer slot is masked".into()));
    }
    let logits = pointer_logits(d, e, head)?;
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, &m)| if m { 0.0 } else { (l - max).exp() })
        .collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    probs.push(0.0);
    Ok(PointerDistribution { step, probs })
}

#[derive(Clone, Debug)]
struct OrderNet {
    encoder: Encoder,
    decoder: Decoder,
    w_q: ParamId,
    w_k: ParamId,
}

/// Transformer encoder-decoder with a pointer head, trained from scratch.
pub struct PointerOrderer {
    store: ParamStore,
    net: OrderNet,
    vocab: Vocab,
    dims: ModelDims,
    train: Option<(TrainConfig, d2t_nn::Adam)>,
    epochs_completed: usize,
}

/// Decoder input for teacher forcing or for the next greedy step:
/// `<s></s>` followed by `<s> f </s>` for every fact chosen so far. Returns
/// the ids and the position of every `</s>`.
fn decoder_input(fact_ids: &[Vec<usize>], chosen: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut ids = vec![BOS, EOS];
    let mut ends = vec![1];
    for &c in chosen {
        ids.push(BOS);
        ids.extend_from_slice(&fact_ids[c]);
        ends.push(ids.len());
        ids.push(EOS);
    }
    (ids, ends)
}

fn encoder_input(fact_ids: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut ids = Vec::new();
    let mut ends = Vec::with_capacity(fact_ids.len());
    for f in fact_ids {
        ids.push(BOS);
        ids.extend_from_slice(f);
        ends.push(ids.len());
        ids.push(EOS);
    }
    (ids, ends)
}

impl PointerOrderer {
    pub fn new(vocab: Vocab, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = substream(seed, "init-ordering");
        let mut store = ParamStore::new();
        let cfg = dims.transformer();
        let net = OrderNet {
            encoder: Encoder::new(&mut store, "enc", vocab.len(), &cfg, &mut rng),
            decoder: Decoder::new(&mut store, "dec", vocab.len(), &cfg, &mut rng),
            w_q: store.xavier("ptr.wq", dims.hidden, dims.hidden, &mut rng),
            w_k: store.xavier("ptr.wk", dims.hidden, dims.hidden, &mut rng),
        };
        Ok(PointerOrderer {
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

    pub fn head(&self) -> PointerHead {
        PointerHead {
            w_q: self.store.value(self.net.w_q).clone(),
            w_k: self.store.value(self.net.w_k).clone(),
        }
    }

    /// Pointer projection parameter ids.
    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.net.w_q, self.net.w_k)
    }

    /// Parameter access for diagnostics such as gradient checks.
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder_view(&self) -> EncoderView<'_> {
        EncoderView {
            store: &self.store,
            encoder: &self.net.encoder,
            vocab: &self.vocab,
            dims: self.dims,
        }
    }

    fn fact_ids<S: AsRef<str>>(&self, facts: &[S]) -> Vec<Vec<usize>> {
        facts.iter().map(|f| self.vocab.encode(&tokenize(f.as_ref()))).collect()
    }

    fn check_lengths(&self, fact_ids: &[Vec<usize>]) -> Result<()> {
        let len: usize = fact_ids.iter().map(|f| f.len() + 2).sum();
        // the decoder sees the bootstrap pair plus at most n-1 segments
        if len > self.dims.max_len {
            return Err(Error::Length {
                len,
                max: self.dims.max_len,
            });
        }
        Ok(())
    }

    fn example_loss(
        net: &OrderNet,
        store: &ParamStore,
        hidden: usize,
        fact_ids: &[Vec<usize>],
        gold: &[usize],
    ) -> Option<(f64, Gradients)> {
        let n = fact_ids.len();
        if n < 2 {
            return None;
        }
        let mut g = Graph::new(store);
        let (enc_ids, enc_ends) = encoder_input(fact_ids);
        let memory = net.encoder.forward(&mut g, &enc_ids);
        let e = g.select_rows(memory, &enc_ends);
        let (dec_ids, dec_ends) = decoder_input(fact_ids, &gold[..n - 1]);
        let dec = net.decoder.forward(&mut g, &dec_ids, memory);
        let d = g.select_rows(dec, &dec_ends);
        let wq = g.param(net.w_q);
        let wk = g.param(net.w_k);
        let q = g.matmul(d, wq);
        let k = g.matmul(e, wk);
        let raw = g.matmul_t(q, k);
        let scaled = g.scale(raw, 1.0 / (hidden as f64).sqrt());
        let mut mask = Array2::zeros((n, n));
        for (j, &chosen) in gold.iter().enumerate() {
            for row in j + 1..n {
                mask[[row, chosen]] = f64::NEG_INFINITY;
            }
        }
        let logits = g.add_const(scaled, &mask);
        // the final step has a single candidate and carries no information
        let targets: Vec<Option<usize>> = (0..n).map(|j| (j + 1 < n).then_some(gold[j])).collect();
        let loss = g.cross_entropy(logits, &targets);
        Some((g.scalar(loss), g.backward(loss)))
    }

    /// Mean loss and summed-then-averaged gradients over `(facts, gold)`
    /// pairs, where `gold[j]` is the index in `facts` of the j-th fact.
    pub fn loss_and_grads(&self, batch: &[(Vec<String>, Vec<usize>)]) -> Result<(f64, Gradients)> {
        let mut total = 0.0;
        let mut grads = Gradients::zeros_like(&self.store);
        let mut count = 0;
        for (facts, gold) in batch {
            if facts.len() != gold.len() || !is_permutation(gold) {
                return Err(Error::CorruptExample(format!(
                    "gold order {gold:?} for {} facts",
                    facts.len()
                )));
            }
            let ids = self.fact_ids(facts);
            self.check_lengths(&ids)?;
            if let Some((l, g)) = Self::example_loss(&self.net, &self.store, self.dims.hidden, &ids, gold) {
                total += l;
                grads.merge(g);
                count += 1;
            }
        }
        if count > 0 {
            grads.scale(1.0 / count as f64);
            total /= count as f64;
        }
        Ok((total, grads))
    }

    /// Full per-step distributions of a greedy decode.
    pub fn decode(&self, facts: &[&str]) -> Result<Vec<PointerDistribution>> {
        let n = facts.len();
        if n == 0 {
            return Err(Error::Input("cannot order an empty fact set".into()));
        }
        let ids = self.fact_ids(facts);
        self.check_lengths(&ids)?;
        let head = self.head();
        let (memory, e) = {
            let mut g = Graph::new(&self.store);
            let (enc_ids, enc_ends) = encoder_input(&ids);
            let m = self.net.encoder.forward(&mut g, &enc_ids);
            let m = g.value(m).clone();
            let e = m.select(Axis(0), &enc_ends);
            (m, e)
        };
        let mut chosen = Vec::with_capacity(n);
        let mut mask = vec![false; n];
        let mut steps = Vec::with_capacity(n);
        for j in 0..n {
            let dist = if j + 1 == n {
                let mut probs: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
                probs.push(0.0);
                PointerDistribution { step: j, probs }
            } else {
                let mut g = Graph::new(&self.store);
                let mem = g.constant(memory.clone());
                let (dec_ids, _) = decoder_input(&ids, &chosen);
                let dec = self.net.decoder.forward(&mut g, &dec_ids, mem);
                let d = g.value(dec).row(dec_ids.len() - 1).to_owned();
                pointer_step(d.view(), &e, &head, &mask, j)?
            };
            let pick = dist.argmax();
            mask[pick] = true;
            chosen.push(pick);
            steps.push(dist);
        }
        Ok(steps)
    }

    pub fn order_texts(&self, facts: &[&str]) -> Result<Vec<usize>> {
        Ok(self.decode(facts)?.iter().map(PointerDistribution::argmax).collect())
    }

    /// Trains on sentence sequences given in gold order; each epoch feeds
    /// a fresh random shuffle and asks the model to restore the original.
    pub fn train<M>(
        &mut self,
        documents: &[Vec<String>],
        cfg: &TrainConfig,
        epochs: usize,
        mut monitor: M,
    ) -> Result<Vec<EpochStats>>
    where
        M: FnMut(&EpochStats, &Self) -> Control,
    {
        cfg.validate()?;
        if documents.is_empty() {
            return Err(Error::Input("cannot train ordering on an empty corpus".into()));
        }
        let encoded: Vec<Vec<Vec<usize>>> = documents.iter().map(|d| self.fact_ids(d)).collect();
        for (i, doc) in encoded.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::CorruptExample(format!("document {i} has no sentences")));
            }
            self.check_lengths(doc)?;
        }
        let mut adam = crate::backend::resume_optimizer(self.train.take(), cfg, documents.len(), &self.store);
        let mut history = Vec::new();
        for _ in 0..epochs {
            let epoch = self.epochs_completed;
            let (net, hidden) = (&self.net, self.dims.hidden);
            let stats = fit_epoch(&mut self.store, &mut adam, cfg, epoch, encoded.len(), |store, i, rng| {
                let doc = &encoded[i];
                if doc.len() < 2 {
                    return Ok(None);
                }
                let (shuffled, gold) = shuffle_document(doc, rng);
                Ok(Self::example_loss(net, store, hidden, &shuffled, &gold))
            })?;
            self.epochs_completed += 1;
            log::debug!("ordering epoch {} loss {:.4}", stats.epoch, stats.mean_loss);
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
            kind: ModelKind::Ordering,
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
        let ckpt = read_checkpoint_header(dir, ModelKind::Ordering)?;
        let mut model = PointerOrderer::new(ckpt.vocab, ckpt.manifest.dims, 0)?;
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
}

/// Random presentation order of a document plus the gold pointer targets:
/// `gold[j]` is the shuffled position of the j-th original sentence.
pub fn shuffle_document<T: Clone>(doc: &[T], rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..doc.len()).collect();
    perm.shuffle(rng);
    let shuffled = perm.iter().map(|&p| doc[p].clone()).collect();
    let mut gold = vec![0; doc.len()];
    for (pos, &orig) in perm.iter().enumerate() {
        gold[orig] = pos;
    }
    (shuffled, gold)
}

impl FactOrderer for PointerOrderer {
    fn order(&self, facts: &[Fact]) -> Result<Vec<usize>> {
        let texts: Vec<&str> = facts.iter().map(|f| f.text.as_str()).collect();
        self.order_texts(&texts)
    }
}

/// Builds and trains an ordering model on the sentences of `corpus`.
pub fn train_ordering(corpus: &[CorpusExample], cfg: &TrainConfig, dims: ModelDims) -> Result<PointerOrderer> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot train ordering on an empty corpus".into()));
    }
    let docs: Vec<Vec<String>> = corpus.iter().map(|c| c.sentences.clone()).collect();
    let vocab = Vocab::build(docs.iter().flatten());
    let mut model = PointerOrderer::new(vocab, dims, cfg.seed)?;
    model.train(&docs, cfg, cfg.epochs, |_, _| Control::Continue)?;
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingScores {
    pub accuracy: f64,
    pub bleu2: f64,
}

/// Exact-match accuracy and BLEU-2 over position-index tokens.
pub fn eval_ordering(predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<OrderingScores> {
    if predicted.len() != gold.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} gold plans",
            predicted.len(),
            gold.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Input("no plans to evaluate".into()));
    }
    let exact = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    let as_tokens = |p: &Vec<usize>| p.iter().map(|i| i.to_string()).collect::<Vec<_>>();
    let cands: Vec<Vec<String>> = predicted.iter().map(as_tokens).collect();
    let refs: Vec<Vec<Vec<String>>> = gold.iter().map(|g| vec![as_tokens(g)]).collect();
    Ok(OrderingScores {
        accuracy: exact as f64 / predicted.len() as f64,
        bleu2: bleu_tokens(&cands, &refs, 2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn tiny() -> ModelDims {
        ModelDims {
            hidden: 16,
            heads: 2,
            ff: 32,
            layers: 1,
            max_len: 128,
        }
    }

    fn fact(text: &str) -> Fact {
        Fact {
            text: text.to_string(),
            source: crate::facts::Triple::new("X", "p", "o").unwrap(),
        }
    }

    #[test]
    fn identical_rows_give_uniform_distribution() {
        let e = Array2::from_elem((4, 3), 0.7);
        let d = array![0.1, -0.4, 2.0];
        let p = pointer_step(d.view(), &e, &PointerHead::identity(3), &[false, true, false, false], 1).unwrap();
        assert_eq!(p.probs.len(), 5);
        for (i, v) in p.fact_probs().iter().enumerate() {
            let want = if i == 1 { 0.0 } else { 1.0 / 3.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn two_slot_hand_softmax() {
        let e = array![[0.0], [3f64.ln()]];
        let d = array![1.0];
        let head = PointerHead::identity(1);
        let p = pointer_step(d.view(), &e, &head, &[false, false], 0).unwrap();
        assert!((p.probs[0] - 0.25).abs() < 1e-9 && (p.probs[1] - 0.75).abs() < 1e-9);
        let p = pointer_step(d.view(), &e, &head, &[true, false], 1).unwrap();
        assert_eq!(&p.probs[..2], &[0.0, 1.0]);
        assert!(matches!(
            pointer_step(d.view(), &e, &head, &[true, true], 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn shared_scaling_keeps_argmax() {
        let e = array![[0.3, -1.0], [0.2, 0.5], [-0.7, 0.1]];
        let d = array![0.4, 0.9];
        let head = PointerHead::new(array![[0.5, 0.1], [-0.3, 0.8]], array![[1.0, 0.2], [0.0, -0.6]]).unwrap();
        let scaled = PointerHead::new(&head.w_q * 3.0, &head.w_k * 3.0).unwrap();
        let a = pointer_logits(d.view(), &e, &head).unwrap();
        let b = pointer_logits(d.view(), &e, &scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 9.0 * x).abs() < 1e-12);
        }
        let mask = [false; 3];
        assert_eq!(
            pointer_step(d.view(), &e, &head, &mask, 0).unwrap().argmax(),
            pointer_step(d.view(), &e, &scaled, &mask, 0).unwrap().argmax()
        );
        assert!(PointerHead::new(Array2::eye(2), Array2::eye(3)).is_err());
    }

    #[test]
    fn encode_fact_sequence_shapes() {
        let m = PointerOrderer::new(
            Vocab::build(["a b c"]),
            ModelDims {
                hidden: 64,
                heads: 4,
                ..tiny()
            },
            0,
        )
        .unwrap();
        let view = m.encoder_view();
        assert_eq!(encode_fact_sequence(&[fact("a b.")], &view).unwrap().dim(), (1, 64));
        let facts = [
            fact("Allen Forrest is a solo singer."),
            fact("Allen Forrest performs Pop music."),
            fact("Allen Forrest was born in Dothan, Alabama."),
        ];
        assert_eq!(encode_fact_sequence(&facts, &view).unwrap().dim(), (3, 64));
        assert!(encode_fact_sequence(&[], &view).is_err());
    }

    #[test]
    fn shuffle_targets_restore_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let doc = vec!["a", "b", "c", "d", "e"];
        let (shuffled, gold) = shuffle_document(&doc, &mut rng);
        let restored: Vec<&str> = gold.iter().map(|&k| shuffled[k]).collect();
        assert_eq!(restored, doc);
    }

    #[test]
    fn loss_decreases_and_single_sentences_are_skipped() {
        let docs: Vec<Vec<String>> = (0..10)
            .map(|i| {
                let k = 1 + i % 4;
                (0..k).map(|j| format!("w{j} is item {i}.")).collect()
            })
            .collect();
        let vocab = Vocab::build(docs.iter().flatten());
        let mut m = PointerOrderer::new(vocab, tiny(), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::toy()
        };
        let hist = m.train(&docs, &cfg, 50, |_, _| Control::Continue).unwrap();
        assert!(hist.last().unwrap().mean_loss < hist[0].mean_loss * 0.5, "{hist:?}");
        assert!(hist.iter().all(|h| h.examples == 7));
        let single = vec![(vec!["w0 is item 1.".to_string()], vec![0])];
        assert_eq!(m.loss_and_grads(&single).unwrap().0, 0.0);
    }

    #[test]
    fn memorizes_one_gold_order() {
        let doc: Vec<String> = ["b is two.", "c is three.", "a is one."]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut m = PointerOrderer::new(Vocab::build(&doc), tiny(), 2).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::toy()
        };
        m.train(&[doc.clone()], &cfg, 150, |_, _| Control::Continue).unwrap();
        let shuffled = ["a is one.", "b is two.", "c is three."];
        assert_eq!(m.order_texts(&shuffled).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn eval_ordering_scores() {
        let gold = vec![vec![0, 1, 2], vec![1, 0]];
        let s = eval_ordering(&gold, &gold).unwrap();
        assert_eq!((s.accuracy, s.bleu2), (1.0, 100.0));
        assert!(eval_ordering(&gold, &gold[..1]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = PointerOrderer::new(Vocab::build(["x y z."]), tiny(), 4).unwrap();
        m.save(dir.path()).unwrap();
        let back = PointerOrderer::load(dir.path()).unwrap();
        assert_eq!(back.head(), m.head());
        let facts = ["x y.", "z.", "y x z."];
        assert_eq!(back.order_texts(&facts).unwrap(), m.order_texts(&facts).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn untrained_model_emits_permutations(n in 1usize..=12, seed in 0u64..1000) {
            let m = PointerOrderer::new(Vocab::build(["a b c d e f"]), ModelDims { max_len: 256, ..tiny() }, seed).unwrap();
            let words = ["a", "b", "c", "d", "e", "f"];
            let facts: Vec<Fact> = (0..n).map(|i| fact(&format!("{} {}.", words[i % 6], words[(i * 7 + seed as usize) % 6]))).collect();
            let order = order_facts(&facts, &m).unwrap();
            prop_assert!(is_permutation(&order) && order.len() == n);
        }
    }
}
