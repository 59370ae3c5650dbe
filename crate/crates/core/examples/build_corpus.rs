//! Builds a paragraph corpus from a noisy generated dump: extraction
//! filters, rule-based splitting, heuristic coreference replacement and
//! lexical entailment filtering.
//!
//! cargo run --example build_corpus -- [paragraphs] [out_dir]

use std::path::PathBuf;

use d2t::backend::LexicalEntailment;
use d2t::corpus::{build_corpus, CorpusBackends, CorpusConfig, HeuristicCoref, RuleSplitter};
use d2t::synthetic::{dump_jsonl, synthetic_dump};
use d2t::Error;

fn main() -> d2t::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(400);
    let tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let out: PathBuf = args.next().map(PathBuf::from).unwrap_or_else(|| tmp.path().join("corpus"));

    let dump = tmp.path().join("dump.jsonl");
    std::fs::write(&dump, dump_jsonl(&synthetic_dump(3, n, true))).map_err(|e| Error::io(&dump, e))?;

    let nli = LexicalEntailment::default();
    let backends = CorpusBackends {
        splitter: &RuleSplitter,
        coref: &HeuristicCoref,
        nli: &nli,
    };
    let cfg = CorpusConfig {
        seed: 3,
        dev_size: Some(n / 20),
        test_size: Some(n / 20),
        ..Default::default()
    };
    let built = build_corpus(&dump, &cfg, &backends, Some(&out))?;
    let s = &built.stats;
    println!("extraction {:?}", s.extraction);
    println!(
        "processed {}  omissions {}  hallucinations {}  retention {:.3}",
        s.processed, s.omissions, s.hallucinations, s.retention
    );
    for (split, st) in &s.full {
        println!(
            "  {split:<5} full {:>4}  filtered {:>4}",
            st.examples, s.filtered[split].examples
        );
    }
    println!("wrote {}", out.display());

    let ex = built.splits["train"]
        .iter()
        .find(|e| e.agg_labels.len() >= 2)
        .expect("a multi-sentence example");
    println!("\nparagraph: {}", ex.paragraph);
    for (i, sent) in ex.sentences.iter().enumerate() {
        let delim = ex.agg_labels.as_slice().get(i).map(|d| format!(" [{d}]")).unwrap_or_default();
        println!("  ({}) {sent}{delim}", ex.origins[i]);
    }
    Ok(())
}
