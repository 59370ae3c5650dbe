//! Sentence splitting for corpus construction: the rule-based splitter,
//! a toy split model trained on generated pairs, recursive application
//! with the duplicate fallback, and coreference replacement.
//!
//! cargo run --release --example split_rephrase -- [pairs] [epochs]

use d2t::backend::Control;
use d2t::backend::ToySeq2Seq;
use d2t::backend::{ModelDims, ModelKind, TextGenerator, TrainConfig, Vocab};
use d2t::corpus::{replace_coreferences, split_and_rephrase, HeuristicCoref, RuleSplitter};
use d2t::synthetic::split_pairs;

/// Always echoes its input, which triggers the duplicate fallback.
struct Echo;

impl TextGenerator for Echo {
    fn generate_text(&self, input: &str) -> d2t::Result<String> {
        Ok(input.to_string())
    }
}

fn main() -> d2t::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(30);

    let sentence = "Anna Novak is a pianist who performs jazz music and was born in Prague in 1971.";
    for depth in 0..=2 {
        println!("rule depth {depth}: {:?}", split_and_rephrase(sentence, &RuleSplitter, depth));
    }
    println!("echo depth 2: {:?}", split_and_rephrase(sentence, &Echo, 2));

    let pairs = split_pairs(5, n);
    let vocab = Vocab::build(pairs.iter().flat_map(|(s, t)| [s, t]));
    let mut model = ToySeq2Seq::new(ModelKind::Split, vocab, ModelDims::default(), 0)?;
    let cfg = TrainConfig::toy();
    model.train(
        &cfg,
        pairs.len(),
        epochs,
        |i, _| pairs[i].clone(),
        |s, _| {
            if s.epoch % 10 == 9 {
                println!("epoch {:>3}  loss {:.4}", s.epoch + 1, s.mean_loss);
            }
            if s.mean_loss < 0.01 {
                Control::Stop
            } else {
                Control::Continue
            }
        },
    )?;
    let (src, gold) = &pairs[0];
    println!("\nmodel: {src}\n   -> {}\n gold: {gold}", model.generate_text(src)?);

    let sentences: Vec<String> = [
        "Anna Novak is a pianist.",
        "She performs jazz music.",
        "Her husband is Tom Lee.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    println!("\ncoref: {:?}", replace_coreferences(&sentences, &HeuristicCoref)?);
    Ok(())
}
