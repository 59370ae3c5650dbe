//! Trains the toy aggregation model to place sentence boundaries between
//! ordered facts and compares it with uniform-random delimiters.
//!
//! cargo run --example aggregate -- [examples] [max_epochs]

use d2t::aggregation::{eval_aggregation, random_delimiters, ToyAggregator};
use d2t::backend::{Control, ModelDims, TrainConfig, Vocab};
use d2t::facts::Delimiters;
use d2t::rng::substream;
use d2t::synthetic::synthetic_corpus;

fn main() -> d2t::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let max_epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);

    let corpus = synthetic_corpus(8, n);
    let (train, held) = corpus.split_at(n * 4 / 5);
    let pairs = |xs: &[d2t::corpus::CorpusExample]| -> Vec<(Vec<String>, Delimiters)> {
        xs.iter().map(|c| (c.sentences.clone(), c.agg_labels.clone())).collect()
    };
    let (train, held) = (pairs(train), pairs(held));
    let gold: Vec<Delimiters> = held.iter().map(|(_, d)| d.clone()).collect();
    let score = |m: &ToyAggregator| {
        let pred: Vec<Delimiters> = held.iter().map(|(s, _)| m.predict_texts(s).unwrap()).collect();
        eval_aggregation(&pred, &gold).unwrap()
    };

    let vocab = Vocab::build(corpus.iter().flat_map(|c| &c.sentences));
    let mut model = ToyAggregator::new(vocab, ModelDims::default(), 0)?;
    model.fit_delimiters(&train, &TrainConfig::toy(), max_epochs, |s, m| {
        if s.epoch % 5 != 4 {
            return Control::Continue;
        }
        let sc = score(m);
        println!(
            "epoch {:>3}  loss {:.4}  held-out per-boundary {:.3}",
            s.epoch + 1,
            s.mean_loss,
            sc.per_boundary
        );
        if s.mean_loss < 1e-3 {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;

    let mut rng = substream(8, "random-delimiters");
    let random: Vec<Delimiters> = gold.iter().map(|g| random_delimiters(g.len(), &mut rng)).collect();
    println!("model  {:?}", score(&model));
    println!("random {:?}", eval_aggregation(&random, &gold)?);

    let (sentences, labels) = &held[0];
    println!(
        "\n{:?} (gold {:?})",
        model.predict_texts(sentences)?.as_slice(),
        labels.as_slice()
    );
    for s in sentences {
        println!("  {s}");
    }
    Ok(())
}
