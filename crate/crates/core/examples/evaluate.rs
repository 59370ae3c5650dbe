//! System and plan evaluation: corpus BLEU, entailment-based omission and
//! hallucination rates, ordering accuracy and BLEU-2 against a random
//! baseline, and intrinsic scores on corpus examples.
//!
//! cargo run --example evaluate

use d2t::aggregation::SeparateAll;
use d2t::backend::LexicalEntailment;
use d2t::eval::{evaluate_system, intrinsic_eval, EvalSettings, IntrinsicModels, SystemOutput};
use d2t::facts::realize_all;
use d2t::ordering::{eval_ordering, IdentityOrderer};
use d2t::pipeline::copy_baseline;
use d2t::rng::substream;
use d2t::synthetic::{synthetic_corpus, synthetic_dataset, templates};
use rand::seq::SliceRandom;
use rand::Rng;

fn main() -> d2t::Result<()> {
    let reg = templates();
    let nli = LexicalEntailment::default();
    let dataset = synthetic_dataset(4, 200);
    let refs: Vec<Vec<String>> = dataset.iter().map(|r| r.references.clone()).collect();

    // the copy baseline and a variant that drops the last fact and adds a
    // claim nobody asked for
    let mut copy = Vec::new();
    let mut lossy = Vec::new();
    for rec in &dataset {
        let triples = rec.triples()?;
        let facts = realize_all(&triples, &reg)?;
        copy.push(SystemOutput {
            id: rec.id.clone(),
            output: copy_baseline(&triples, &reg)?,
            facts: facts.clone(),
        });
        let kept: Vec<&str> = facts.iter().take(facts.len().max(2) - 1).map(|f| f.text.as_str()).collect();
        lossy.push(SystemOutput {
            id: rec.id.clone(),
            output: format!("{} It won an award in 2003.", kept.join(" ")),
            facts,
        });
    }
    for (tag, outputs) in [("copy", &copy), ("lossy", &lossy)] {
        let settings = EvalSettings {
            system_tag: tag.into(),
            nli: Some(&nli),
            meteor: None,
            details: None,
        };
        let (r, _) = evaluate_system(outputs, &refs, &settings)?;
        println!(
            "{tag:<6} BLEU {:6.2}  omissions/fact {:.3}  hallucinations/example {:.3}",
            r.bleu,
            r.omissions_per_fact.unwrap_or(f64::NAN),
            r.hallucinations_per_example.unwrap_or(f64::NAN)
        );
    }

    // plans: a system that recovers most gold orders against random orders
    let mut rng = substream(4, "plans");
    let gold: Vec<Vec<usize>> = (0..300)
        .map(|_| {
            let mut g: Vec<usize> = (0..rng.random_range(2..6)).collect();
            g.shuffle(&mut rng);
            g
        })
        .collect();
    let system: Vec<Vec<usize>> = gold
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut p = g.clone();
            if i % 3 == 0 {
                p.swap(0, 1);
            }
            p
        })
        .collect();
    let random: Vec<Vec<usize>> = gold
        .iter()
        .map(|g| {
            let mut p = g.clone();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let s = eval_ordering(&system, &gold)?;
    let r = eval_ordering(&random, &gold)?;
    println!("\nsystem  B-2 {:.2}  Acc {:.2}", s.bleu2, s.accuracy);
    println!("random  B-2 {:.2}  Acc {:.2}", r.bleu2, r.accuracy);

    // intrinsic: identity ordering and one sentence per fact on gold data
    let test = synthetic_corpus(5, 100);
    let models = IntrinsicModels {
        orderer: Some(&IdentityOrderer),
        aggregator: Some(&SeparateAll),
        compressor: None,
        meteor: None,
    };
    println!("\n{:#?}", intrinsic_eval(&test, &models, 0)?);
    Ok(())
}
