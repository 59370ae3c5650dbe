//! Sentence-boundary aggregation: one fuse/separate decision per pair of
//! adjacent ordered facts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Control, EpochStats, ModelDims, TokenClassifier, ToyTokenClassifier, TrainConfig, Vocab};
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};
use crate::facts::{Delimiters, Fact};
use crate::text::tokenize;

pub trait DelimiterPredictor: Send + Sync {
    fn predict(&self, ordered: &[Fact]) -> Result<Delimiters>;
}

/// Predicts delimiters and checks the length law.
pub fn predict_delimiters(ordered: &[Fact], model: &dyn DelimiterPredictor) -> Result<Delimiters> {
    if ordered.is_empty() {
        return Err(Error::Input("cannot aggregate an empty fact sequence".into()));
    }
    if ordered.len() == 1 {
        return Ok(Delimiters::default());
    }
    let d = model.predict(ordered)?;
    if d.len() + 1 != ordered.len() {
        return Err(Error::Contract(format!("{} delimiters for {} facts", d.len(), ordered.len())));
    }
    Ok(d)
}

/// Separates every pair of facts.
#[derive(Clone, Copy, Debug, Default)]
pub struct SeparateAll;

impl DelimiterPredictor for SeparateAll {
    fn predict(&self, ordered: &[Fact]) -> Result<Delimiters> {
        Delimiters::new(vec![1; ordered.len().saturating_sub(1)])
    }
}

/// Uniform random 0/1 values.
pub fn random_delimiters<R: Rng>(len: usize, rng: &mut R) -> Delimiters {
    Delimiters::new((0..len).map(|_| rng.random_range(0..=1u8)).collect()).expect("values are 0 or 1")
}

/// Facts joined by a single `</s>` between neighbours, plus the separator
/// positions.
pub fn aggregation_tokens<S: AsRef<str>>(facts: &[S]) -> (Vec<String>, Vec<usize>) {
    let mut tokens = Vec::new();
    let mut seps = Vec::with_capacity(facts.len().saturating_sub(1));
    for (i, f) in facts.iter().enumerate() {
        if i > 0 {
            seps.push(tokens.len());
            tokens.push("</s>".to_string());
        }
        tokens.extend(tokenize(f.as_ref()));
    }
    (tokens, seps)
}

/// Class 1 (separate) wins ties.
fn decide(p0: f64, p1: f64) -> u8 {
    u8::from(p1 >= p0)
}

/// The toy aggregation model: a token classifier read at separator
/// positions.
pub type ToyAggregator = ToyTokenClassifier;

impl ToyTokenClassifier {
    pub fn predict_texts<S: AsRef<str>>(&self, ordered: &[S]) -> Result<Delimiters> {
        let (tokens, seps) = aggregation_tokens(ordered);
        let probs = self.classify(&tokens)?;
        Delimiters::new(seps.iter().map(|&p| decide(probs[[p, 0]], probs[[p, 1]])).collect())
    }

    /// Trains on `(sentences, labels)` pairs; loss only at separators.
    pub fn fit_delimiters<M>(
        &mut self,
        examples: &[(Vec<String>, Delimiters)],
        cfg: &TrainConfig,
        epochs: usize,
        monitor: M,
    ) -> Result<Vec<EpochStats>>
    where
        M: FnMut(&EpochStats, &Self) -> Control,
    {
        let mut prepared = Vec::with_capacity(examples.len());
        for (i, (sentences, labels)) in examples.iter().enumerate() {
            if labels.len() + 1 != sentences.len() {
                return Err(Error::CorruptExample(format!(
                    "example {i}: {} labels for {} sentences",
                    labels.len(),
                    sentences.len()
                )));
            }
            let (tokens, seps) = aggregation_tokens(sentences);
            let mut targets = vec![None; tokens.len()];
            for (&pos, &l) in seps.iter().zip(labels.as_slice()) {
                targets[pos] = Some(l as usize);
            }
            prepared.push((tokens, targets));
        }
        self.train(cfg, prepared.len(), epochs, |i, _| Ok(prepared[i].clone()), monitor)
    }
}

impl DelimiterPredictor for ToyAggregator {
    fn predict(&self, ordered: &[Fact]) -> Result<Delimiters> {
        let texts: Vec<&str> = ordered.iter().map(|f| f.text.as_str()).collect();
        self.predict_texts(&texts)
    }
}

/// Builds and trains an aggregation model on `corpus`.
pub fn train_aggregation(corpus: &[CorpusExample], cfg: &TrainConfig, dims: ModelDims) -> Result<ToyAggregator> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot train aggregation on an empty corpus".into()));
    }
    let examples: Vec<(Vec<String>, Delimiters)> = corpus.iter().map(|c| (c.sentences.clone(), c.agg_labels.clone())).collect();
    let vocab = Vocab::build(examples.iter().flat_map(|(s, _)| s));
    let mut model = ToyAggregator::new(vocab, dims, cfg.seed)?;
    model.fit_delimiters(&examples, cfg, cfg.epochs, |_, _| Control::Continue)?;
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationScores {
    pub per_example: f64,
    pub per_boundary: f64,
    pub boundaries: usize,
}

/// Exact-sequence accuracy and pooled per-boundary accuracy.
pub fn eval_aggregation(predicted: &[Delimiters], gold: &[Delimiters]) -> Result<AggregationScores> {
    if predicted.len() != gold.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} gold sequences",
            predicted.len(),
            gold.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Input("no delimiter sequences to evaluate".into()));
    }
    let mut exact = 0;
    let mut hits = 0;
    let mut total = 0;
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Input(format!(
                "sequence {i}: {} predicted vs {} gold boundaries",
                p.len(),
                g.len()
            )));
        }
        exact += usize::from(p == g);
        hits += p.as_slice().iter().zip(g.as_slice()).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    let per_example = exact as f64 / predicted.len() as f64;
    Ok(AggregationScores {
        per_example,
        per_boundary: if total == 0 { per_example } else { hits as f64 / total as f64 },
        boundaries: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(v: &[u8]) -> Delimiters {
        Delimiters::new(v.to_vec()).unwrap()
    }

    fn dims() -> ModelDims {
        ModelDims {
            hidden: 16,
            heads: 2,
            ff: 32,
            layers: 1,
            max_len: 200,
        }
    }

    #[test]
    fn separators_between_pairs_only() {
        let (tokens, seps) = aggregation_tokens(&["A b.", "C d.", "E."]);
        assert_eq!(tokens.join(" "), "A b . </s> C d . </s> E .");
        assert_eq!(seps, vec![3, 7]);
        assert!(aggregation_tokens(&["A."]).1.is_empty());
    }

    #[test]
    fn ties_separate() {
        assert_eq!(decide(0.5, 0.5), 1);
        assert_eq!(decide(0.6, 0.4), 0);
    }

    #[test]
    fn scores() {
        let gold = vec![d(&[0, 1]), d(&[1]), d(&[])];
        let s = eval_aggregation(&gold, &gold).unwrap();
        assert_eq!((s.per_example, s.per_boundary), (1.0, 1.0));
        let pred = vec![d(&[0, 0]), d(&[1]), d(&[])];
        let s = eval_aggregation(&pred, &gold).unwrap();
        assert!((s.per_example - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.per_boundary - 2.0 / 3.0).abs() < 1e-12);
        assert!(eval_aggregation(&pred[..1], &gold).is_err());
        assert!(eval_aggregation(&[d(&[1])], &[d(&[1, 0])]).is_err());
    }

    #[test]
    fn label_length_mismatch_is_corrupt() {
        let mut m = ToyAggregator::new(Vocab::build(["a b"]), dims(), 0).unwrap();
        let bad = vec![(vec!["a.".to_string(), "b.".to_string()], d(&[1, 0]))];
        let err = m
            .fit_delimiters(&bad, &TrainConfig::toy(), 1, |_, _| Control::Continue)
            .unwrap_err();
        assert!(matches!(err, Error::CorruptExample(_)));
    }

    #[test]
    fn memorizes_labels_and_skips_singletons() {
        let ex = vec![
            (
                vec!["x is a.".to_string(), "x is b.".to_string(), "x is c.".to_string()],
                d(&[0, 1]),
            ),
            (vec!["y is d.".to_string()], d(&[])),
        ];
        let mut m = ToyAggregator::new(Vocab::build(ex.iter().flat_map(|(s, _)| s)), dims(), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::toy()
        };
        let hist = m.fit_delimiters(&ex, &cfg, 100, |_, _| Control::Continue).unwrap();
        assert!(hist.iter().all(|h| h.examples == 1));
        assert!(hist.last().unwrap().mean_loss < hist[0].mean_loss);
        assert_eq!(m.predict_texts(&ex[0].0).unwrap(), d(&[0, 1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn delimiter_length_law(n in 1usize..=12, seed in 0u64..50) {
            let m = ToyAggregator::new(Vocab::build(["p q r"]), dims(), seed).unwrap();
            let facts: Vec<Fact> = (0..n).map(|i| Fact {
                text: format!("p {} q.", ["p", "q", "r"][i % 3]),
                source: crate::facts::Triple::new("p", "q", "r").unwrap(),
            }).collect();
            let out = predict_delimiters(&facts, &m).unwrap();
            prop_assert_eq!(out.len(), n - 1);
            prop_assert!(out.as_slice().iter().all(|&v| v <= 1));
        }
    }
}
