//! Builds paragraph-compression inputs for the three variants and fits a
//! toy compression model on generated paragraphs.
//!
//! cargo run --example compress -- [examples] [max_epochs] [variant]

use std::time::Instant;

use d2t::backend::{Control, ModelDims, TextGenerator, TrainConfig};
use d2t::compression::{check_plan_following, format_pc_input, train_pc_with, PcInput, PcVariant};
use d2t::eval::bleu;
use d2t::facts::{realize_all, Delimiters, Triple};
use d2t::synthetic::{synthetic_corpus, templates};

fn main() -> d2t::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let max_epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let variant: PcVariant = args.next().as_deref().unwrap_or("PC").parse()?;

    let triples = vec![
        Triple::new("Allen Forrest", "occupation", "singer")?,
        Triple::new("Allen Forrest", "genre", "pop")?,
        Triple::new("Allen Forrest", "birthPlace", "Fort Campbell")?,
    ];
    let facts = realize_all(&triples, &templates())?;
    let plan = Delimiters::new(vec![0, 1])?;
    for v in [PcVariant::Pc, PcVariant::PcAgg, PcVariant::PcOrdAgg] {
        let d = (v == PcVariant::Pc).then_some(&plan);
        println!("{:<10} {}", v.as_str(), format_pc_input(&facts, d, v, None)?.text);
    }

    let corpus = synthetic_corpus(11, n);
    let sources: Vec<PcInput> = corpus
        .iter()
        .map(|c| PcInput {
            text: d2t::compression::join_with_delimiters(
                &c.sentences,
                (variant == PcVariant::Pc).then(|| c.agg_labels.as_slice()),
            ),
            variant,
        })
        .collect();
    let refs: Vec<Vec<String>> = corpus.iter().map(|c| vec![c.paragraph.clone()]).collect();
    let start = Instant::now();
    let cfg = TrainConfig {
        epochs: max_epochs,
        ..TrainConfig::toy()
    };
    let model = train_pc_with(&corpus, variant, &cfg, ModelDims::default(), |s, m| {
        if s.epoch % 10 != 9 {
            return Control::Continue;
        }
        let outs: Vec<String> = sources.iter().map(|p| m.generate_text(&p.text).unwrap()).collect();
        let b = bleu(&outs, &refs, 4).unwrap();
        println!(
            "epoch {:>3}  loss {:.4}  train BLEU {b:.2}  {:.0?}",
            s.epoch + 1,
            s.mean_loss,
            start.elapsed()
        );
        if b >= 90.0 {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;

    let ex = &corpus[0];
    let out = model.generate_text(&sources[0].text)?;
    println!("\ninput : {}\noutput: {out}\ngold  : {}", sources[0].text, ex.paragraph);
    let sentence_facts: Vec<_> = ex.sentences.iter().cloned().map(d2t::facts::Fact::sentence).collect();
    // The last word of each source sentence is its object.
    let anchors: Vec<String> = ex
        .sentences
        .iter()
        .map(|s| s.trim_end_matches('.').rsplit(' ').next().unwrap_or_default().to_string())
        .collect();
    println!(
        "{:?}",
        check_plan_following(&out, &sentence_facts, &ex.agg_labels, Some(&anchors))?
    );
    Ok(())
}
