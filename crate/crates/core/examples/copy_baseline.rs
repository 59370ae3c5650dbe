//! The copy baseline: realized facts joined in input order. Scored with
//! the lexical entailment stand-in it has no omissions and no
//! hallucinations by construction.
//!
//! cargo run --example copy_baseline -- [records]

use d2t::backend::LexicalEntailment;
use d2t::eval::{evaluate_system, EvalSettings, SystemOutput};
use d2t::facts::realize_all;
use d2t::pipeline::copy_baseline;
use d2t::synthetic::{synthetic_dataset, templates};

fn main() -> d2t::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let reg = templates();
    let mut outputs = Vec::new();
    let mut refs = Vec::new();
    for rec in synthetic_dataset(2, n) {
        let triples = rec.triples()?;
        outputs.push(SystemOutput {
            id: rec.id.clone(),
            output: copy_baseline(&triples, &reg)?,
            facts: realize_all(&triples, &reg)?,
        });
        refs.push(rec.references);
    }
    println!("{}\n  ref: {}", outputs[0].output, refs[0][0]);
    let nli = LexicalEntailment::default();
    let settings = EvalSettings {
        system_tag: "copy".into(),
        nli: Some(&nli),
        meteor: None,
        details: None,
    };
    let (report, _) = evaluate_system(&outputs, &refs, &settings)?;
    println!("{report:#?}");
    Ok(())
}
