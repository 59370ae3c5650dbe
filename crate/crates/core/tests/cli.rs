use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use d2t::synthetic::{dump_jsonl, synthetic_corpus, synthetic_dataset, synthetic_dump, templates};
use serde_json::Value;
use tempfile::TempDir;

fn d2t(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2t"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

struct World {
    dir: TempDir,
}

impl World {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("templates.jsonl"), templates().to_jsonl()).unwrap();
        fs::write(p.join("dump.jsonl"), dump_jsonl(&synthetic_dump(5, 60, true))).unwrap();
        let dataset: Vec<String> = synthetic_dataset(6, 8)
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        fs::write(p.join("dataset.jsonl"), dataset.join("\n") + "\n").unwrap();
        let refs: Vec<String> = synthetic_dataset(6, 8)
            .iter()
            .map(|r| serde_json::json!({"id": r.id, "references": r.references}).to_string())
            .collect();
        fs::write(p.join("refs.jsonl"), refs.join("\n") + "\n").unwrap();
        let corpus: Vec<String> = synthetic_corpus(7, 12)
            .iter()
            .map(|c| serde_json::to_string(c).unwrap())
            .collect();
        fs::write(p.join("corpus.jsonl"), corpus.join("\n") + "\n").unwrap();
        World { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Trains a one-epoch model of the given kind with tiny dimensions.
    fn train(&self, which: &str, out: &str, extra: &[&str]) -> Output {
        let corpus = self.path("corpus.jsonl");
        let out = self.path(out);
        let mut args = vec![
            "train",
            which,
            "--corpus",
            s(&corpus),
            "--out",
            s(&out),
            "--epochs",
            "1",
            "--hidden",
            "16",
            "--heads",
            "2",
            "--ff",
            "32",
            "--layers",
            "1",
        ];
        args.extend_from_slice(extra);
        d2t(&args)
    }
}

#[test]
fn build_corpus_writes_both_variants_and_is_reproducible() {
    let w = World::new();
    let (a, b) = (w.path("a"), w.path("b"));
    for out in [&a, &b] {
        let o = d2t(&[
            "build-corpus",
            "--dump",
            s(&w.path("dump.jsonl")),
            "--out",
            s(out),
            "--seed",
            "3",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for variant in ["full", "filtered"] {
        for split in ["train", "dev", "test"] {
            let rel = format!("{variant}/{split}.jsonl");
            assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{rel}");
        }
    }
    assert_eq!(
        fs::read(a.join("stats.json")).unwrap(),
        fs::read(b.join("stats.json")).unwrap()
    );
    let stats: Value = serde_json::from_str(&fs::read_to_string(a.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["extraction"]["read"], 60);
    assert!(a.join("resolved_config.toml").exists() && a.join("run_manifest.json").exists());

    // the resolved config replays to the same corpus
    let c = w.path("c");
    let replay = w.path("replay.toml");
    let text = fs::read_to_string(a.join("resolved_config.toml"))
        .unwrap()
        .replace(s(&a), s(&c));
    fs::write(&replay, text).unwrap();
    let o = d2t(&["build-corpus", "--config", s(&replay)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(a.join("full/train.jsonl")).unwrap(),
        fs::read(c.join("full/train.jsonl")).unwrap()
    );
}

#[test]
fn missing_inputs_are_usage_errors() {
    let w = World::new();
    let o = d2t(&["build-corpus", "--dump", s(&w.path("nope.jsonl")), "--out", s(&w.path("x"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = w.train("pc", "pc", &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("variant"));
    let o = d2t(&["generate", "--out", s(&w.path("g"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_resume_continues_to_the_epoch_total() {
    let w = World::new();
    let o = w.train("ord", "ord", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest =
        |dir: &str| -> Value { serde_json::from_str(&fs::read_to_string(w.path(dir).join("manifest.json")).unwrap()).unwrap() };
    assert_eq!(manifest("ord")["epochs_completed"], 1);
    assert_eq!(lines(&w.path("ord").join("train_log.jsonl")).len(), 1);

    let o = d2t(&[
        "train",
        "ord",
        "--corpus",
        s(&w.path("corpus.jsonl")),
        "--out",
        s(&w.path("ord")),
        "--epochs",
        "3",
        "--resume",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest("ord")["epochs_completed"], 3);
    assert_eq!(manifest("ord")["kind"], "ordering");
}

#[test]
fn generate_and_evaluate_end_to_end() {
    let w = World::new();
    for (which, out, extra) in [
        ("ord", "ord", &[][..]),
        ("agg", "agg", &[][..]),
        ("pc", "pc", &["--variant", "PC"][..]),
    ] {
        let o = w.train(which, out, extra);
        assert_eq!(code(&o), 0, "{which}: {}", stderr(&o));
    }
    let gen = w.path("gen");
    let (ds, tpl) = (w.path("dataset.jsonl"), w.path("templates.jsonl"));
    let (ord, agg, pc) = (w.path("ord"), w.path("agg"), w.path("pc"));
    let o = d2t(&[
        "generate",
        "--dataset",
        s(&ds),
        "--templates",
        s(&tpl),
        "--stages",
        "THREE",
        "--ord-model",
        s(&ord),
        "--agg-model",
        s(&agg),
        "--pc-model",
        s(&pc),
        "--out",
        s(&gen),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let records = lines(&gen.join("generations.jsonl"));
    assert_eq!(records.len(), 8);
    for r in &records {
        assert!(r["error"].is_null(), "{r}");
        let n = r["facts"].as_array().unwrap().len();
        assert_eq!(r["plan"]["order"].as_array().unwrap().len(), n);
        assert_eq!(r["plan"]["delimiters"].as_array().unwrap().len(), n - 1);
    }

    // a two-stage system takes no aggregation model
    let o = d2t(&[
        "generate",
        "--dataset",
        s(&ds),
        "--templates",
        s(&tpl),
        "--stages",
        "TWO",
        "--ord-model",
        s(&ord),
        "--agg-model",
        s(&agg),
        "--pc-model",
        s(&pc),
        "--out",
        s(&w.path("bad")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("takes no aggregation model"), "{}", stderr(&o));
    // and a PC model trained for three stages does not fit one stage
    let o = d2t(&[
        "generate",
        "--dataset",
        s(&ds),
        "--templates",
        s(&tpl),
        "--stages",
        "ONE",
        "--pc-model",
        s(&pc),
        "--out",
        s(&w.path("bad")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("PC_ORD_AGG"), "{}", stderr(&o));

    let ev = w.path("eval");
    let o = d2t(&[
        "evaluate",
        "--mode",
        "system",
        "--outputs",
        s(&gen.join("generations.jsonl")),
        "--references",
        s(&w.path("refs.jsonl")),
        "--nli",
        "lexical",
        "--semantic",
        "--details",
        "--out",
        s(&ev),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_examples"], 8);
    assert!(report["bleu"].as_f64().unwrap() >= 0.0);
    assert!(report["omissions_per_fact"].is_number() && report["hallucinations_per_example"].is_number());
    assert!(ev.join("details.tsv").exists());

    let o = d2t(&[
        "evaluate",
        "--mode",
        "intrinsic",
        "--corpus",
        s(&w.path("corpus.jsonl")),
        "--ord-model",
        s(&ord),
        "--agg-model",
        s(&agg),
        "--out",
        s(&w.path("intr")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let intr: Value = serde_json::from_str(&fs::read_to_string(w.path("intr").join("intrinsic.json")).unwrap()).unwrap();
    assert_eq!(intr["n_examples"], 12);
    assert!(intr["ordering"]["accuracy"].is_number());
}

#[test]
fn semantic_metrics_without_nli_fail_loudly() {
    let w = World::new();
    let base = w.path("copy");
    let o = d2t(&[
        "copy-baseline",
        "--dataset",
        s(&w.path("dataset.jsonl")),
        "--templates",
        s(&w.path("templates.jsonl")),
        "--out",
        s(&base),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let outs = base.join("generations.jsonl");
    assert_eq!(lines(&outs).len(), 8);

    let o = d2t(&[
        "evaluate",
        "--mode",
        "system",
        "--outputs",
        s(&outs),
        "--references",
        s(&w.path("refs.jsonl")),
        "--semantic",
        "--out",
        s(&w.path("e")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("entailment"), "{}", stderr(&o));

    // copying every fact verbatim leaves nothing out and adds nothing
    let o = d2t(&[
        "evaluate",
        "--mode",
        "system",
        "--outputs",
        s(&outs),
        "--references",
        s(&w.path("refs.jsonl")),
        "--nli",
        "lexical",
        "--semantic",
        "--out",
        s(&w.path("e")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(w.path("e").join("report.json")).unwrap()).unwrap();
    assert_eq!(report["omissions_per_fact"], 0.0);
    assert_eq!(report["hallucinations_per_example"], 0.0);
}

#[test]
fn plans_mode_reports_a_random_baseline() {
    let w = World::new();
    let plans = w.path("plans.jsonl");
    fs::write(
        &plans,
        [
            r#"{"id":"a","predicted":[0,1,2],"gold":[0,1,2],"predicted_delimiters":[1,0],"gold_delimiters":[1,1]}"#,
            r#"{"id":"b","predicted":[1,0],"gold":[0,1],"predicted_delimiters":[1],"gold_delimiters":[1]}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let o = d2t(&["evaluate", "--mode", "plans", "--plans", s(&plans), "--out", s(&w.path("p"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("system  B-2") && stdout.contains("random  B-2"), "{stdout}");
    let r: Value = serde_json::from_str(&fs::read_to_string(w.path("p").join("plan_report.json")).unwrap()).unwrap();
    assert_eq!(r["ordering"]["accuracy"], 0.5);
    assert_eq!(r["aggregation"]["per_boundary"], 2.0 / 3.0);
    assert!(r["random_ordering"]["accuracy"].is_number());
}
