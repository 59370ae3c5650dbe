//! Plugs an external worker process into every model slot of a pipeline
//! through `cmd:` specs. The worker here is a short Python script; a real
//! deployment would serve pretrained checkpoints the same way.
//!
//! cargo run --example process_backend   (needs python3)

use std::fs;

use d2t::backend::{entails, ProcessBackend};
use d2t::facts::Triple;
use d2t::pipeline::{CorpusVariant, Pipeline, PipelineConfig, Stages};
use d2t::synthetic::templates;
use d2t::Error;

const WORKER: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    task = req["task"]
    if task == "order":
        # shortest fact first
        facts = req["facts"]
        out = {"order": sorted(range(len(facts)), key=lambda i: (len(facts[i]), i))}
    elif task == "aggregate":
        out = {"delimiters": [i % 2 for i in range(len(req["facts"]) - 1)]}
    elif task == "generate":
        out = {"text": " ".join(t for t in req["input"].split() if t != "<sep>")}
    elif task == "nli":
        p, h = req["premise"].lower(), req["hypothesis"].lower()
        out = {"probs": [0.9, 0.05, 0.05] if h in p else [0.1, 0.8, 0.1]}
    else:
        out = {"error": "unknown task " + task}
    print(json.dumps(out), flush=True)
"#;

fn main() -> d2t::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let script = tmp.path().join("worker.py");
    fs::write(&script, WORKER).map_err(|e| Error::io(&script, e))?;
    let tpl = tmp.path().join("templates.jsonl");
    fs::write(&tpl, templates().to_jsonl()).map_err(|e| Error::io(&tpl, e))?;

    let cmd = format!("cmd:python3 {}", script.display());
    let config = PipelineConfig {
        stages: Stages::Three,
        ord_model: Some(cmd.clone()),
        agg_model: Some(cmd.clone()),
        pc_model: Some(cmd.clone()),
        templates: tpl,
        dataset_id: "toy".into(),
        corpus_variant: CorpusVariant::Full,
        seed: 0,
    };
    let pipeline = Pipeline::load(&config)?;
    let triples = vec![
        Triple::new("Allen Forrest", "genre", "pop")?,
        Triple::new("Allen Forrest", "occupation", "singer")?,
        Triple::new("Allen Forrest", "birthPlace", "Fort Campbell")?,
    ];
    let record = pipeline.run("demo", &triples)?;
    println!("{}", serde_json::to_string_pretty(&record)?);

    let nli = ProcessBackend::from_command_line(&format!("python3 {}", script.display()))?;
    println!("{:?}", entails(&nli, &record.output, "Allen Forrest is a singer.")?);
    Ok(())
}
