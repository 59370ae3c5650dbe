//! Trains small ordering, aggregation and compression models, saves them
//! as checkpoints and runs the three-, two- and one-stage systems on
//! unseen triple sets. Models this small memorise entity names instead of
//! copying them, so the outputs show the wiring rather than quality.
//!
//! cargo run --release --example run_pipeline -- [train_examples] [epochs]

use std::fs;

use d2t::aggregation::train_aggregation;
use d2t::backend::{ModelDims, TrainConfig};
use d2t::compression::train_pc;
use d2t::eval::bleu;
use d2t::ordering::train_ordering;
use d2t::pipeline::{CorpusVariant, Pipeline, PipelineConfig, Stages};
use d2t::synthetic::{synthetic_corpus_min, synthetic_dataset, templates};
use d2t::Error;

fn main() -> d2t::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(150);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(40);

    let tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let dir = tmp.path();
    let tpl = dir.join("templates.jsonl");
    fs::write(&tpl, templates().to_jsonl()).map_err(|e| Error::io(&tpl, e))?;

    let corpus = synthetic_corpus_min(21, n, 2);
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::toy()
    };
    let dims = ModelDims::default();
    println!("training ordering and aggregation on {n} examples for {epochs} epochs");
    train_ordering(&corpus, &cfg, dims)?.save(&dir.join("ord"))?;
    train_aggregation(&corpus, &cfg, dims)?.save(&dir.join("agg"))?;
    for stages in [Stages::Three, Stages::Two, Stages::One] {
        let v = stages.pc_variant();
        println!("training compression {v}");
        train_pc(&corpus, v, &cfg, dims)?.save(&dir.join(v.as_str()))?;
    }

    let dataset = synthetic_dataset(22, 20);
    let refs: Vec<Vec<String>> = dataset.iter().map(|r| r.references.clone()).collect();
    for stages in [Stages::Three, Stages::Two, Stages::One] {
        let path = |p: &str| Some(dir.join(p).display().to_string());
        let config = PipelineConfig {
            stages,
            ord_model: if stages != Stages::One { path("ord") } else { None },
            agg_model: if stages == Stages::Three { path("agg") } else { None },
            pc_model: path(stages.pc_variant().as_str()),
            templates: tpl.clone(),
            dataset_id: "toy".into(),
            corpus_variant: CorpusVariant::Full,
            seed: 0,
        };
        let pipeline = Pipeline::load(&config)?;
        let mut outputs = Vec::new();
        for rec in &dataset {
            outputs.push(pipeline.run(&rec.id, &rec.triples()?)?);
        }
        let texts: Vec<&str> = outputs.iter().map(|g| g.output.as_str()).collect();
        let first = &outputs[0];
        println!(
            "\n{stages}: BLEU {:.2} on {} unseen sets",
            bleu(&texts, &refs, 4)?,
            dataset.len()
        );
        println!("  plan   {:?}", first.plan);
        println!("  input  {}", first.pc_input);
        println!("  output {}", first.output);
    }
    println!("\nreference {}", refs[0][0]);
    Ok(())
}
