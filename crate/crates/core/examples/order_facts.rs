//! Trains the pointer-network orderer on generated musician and restaurant
//! facts and shows the step-wise pointer distributions for one input.
//!
//! cargo run --example order_facts -- [examples] [max_epochs]

use std::time::Instant;

use d2t::backend::{Control, ModelDims, TrainConfig, Vocab};
use d2t::ordering::{eval_ordering, shuffle_document, PointerOrderer};
use d2t::rng::substream;
use d2t::synthetic::synthetic_corpus_min;

fn main() -> d2t::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let max_epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);

    let corpus = synthetic_corpus_min(7, n, 2);
    let docs: Vec<Vec<String>> = corpus.iter().map(|c| c.sentences.clone()).collect();
    let mut rng = substream(7, "probe-shuffle");
    let probes: Vec<(Vec<String>, Vec<usize>)> = docs.iter().map(|d| shuffle_document(d, &mut rng)).collect();

    let mut model = PointerOrderer::new(Vocab::build(docs.iter().flatten()), ModelDims::default(), 0)?;
    let cfg = TrainConfig::toy();
    let start = Instant::now();
    model.train(&docs, &cfg, max_epochs, |s, m| {
        if s.epoch % 5 != 4 {
            return Control::Continue;
        }
        let pred: Vec<Vec<usize>> = probes
            .iter()
            .map(|(p, _)| m.order_texts(&p.iter().map(String::as_str).collect::<Vec<_>>()).unwrap())
            .collect();
        let gold: Vec<Vec<usize>> = probes.iter().map(|(_, g)| g.clone()).collect();
        let acc = eval_ordering(&pred, &gold).unwrap().accuracy;
        println!(
            "epoch {:>3}  loss {:.4}  train accuracy {:.3}  {:.0?}",
            s.epoch + 1,
            s.mean_loss,
            acc,
            start.elapsed()
        );
        if acc >= 0.95 {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;

    let (shuffled, gold) = &probes[0];
    println!("\ninput facts:");
    for (i, f) in shuffled.iter().enumerate() {
        println!("  [{i}] {f}");
    }
    let texts: Vec<&str> = shuffled.iter().map(String::as_str).collect();
    for d in model.decode(&texts)? {
        let probs: Vec<String> = d.fact_probs().iter().map(|p| format!("{p:.2}")).collect();
        println!("step {}: pick {} from [{}]", d.step, d.argmax(), probs.join(", "));
    }
    println!("gold order {gold:?}");
    Ok(())
}
