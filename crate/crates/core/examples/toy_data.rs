//! Writes the generated toy world to disk for use with the `d2t` binary:
//! templates, a raw paragraph dump, a generation dataset with references,
//! and split-and-rephrase training pairs.
//!
//! cargo run --example toy_data -- <out_dir> [size]

use std::fs;
use std::path::PathBuf;

use d2t::synthetic::{dump_jsonl, split_pairs, synthetic_dataset, synthetic_dump, templates};
use d2t::Error;

fn main() -> d2t::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy_data".into()));
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(500);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let write = |name: &str, text: String| -> d2t::Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        println!("{}", p.display());
        Ok(())
    };
    write("templates.jsonl", templates().to_jsonl())?;
    write("dump.jsonl", dump_jsonl(&synthetic_dump(1, n, true)))?;
    let dataset: Vec<String> = synthetic_dataset(2, n / 5)
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
    write("dataset.jsonl", dataset.join("\n") + "\n")?;
    let pairs: Vec<String> = split_pairs(3, n / 2)
        .into_iter()
        .map(|(source, target)| serde_json::json!({"source": source, "target": target}).to_string())
        .collect();
    write("split_pairs.jsonl", pairs.join("\n") + "\n")?;
    Ok(())
}
