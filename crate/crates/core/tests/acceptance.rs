//! Acceptance suite. Criteria 1 to 10 run offline on toy models; 11 to 15
//! need external checkpoints and data and report SKIP unless the
//! environment points at them:
//!
//! - `D2T_NLI`: entailment backend, `cmd:<command line>` (11, 12, 14)
//! - `D2T_WEBNLG_DATA`, `D2T_WEBNLG_PIPELINE`: dataset JSONL and pipeline TOML (11, 14)
//! - `D2T_E2E_DATA`, `D2T_E2E_PIPELINE`: same for E2E (12, 14)
//! - `D2T_ORD_MODEL`, `D2T_WEBNLG_PLANS`: ordering model and gold plans (13)
//! - `D2T_WIKI_CORPUS_DIR`: output directory of a full corpus build (15)
//!
//! The pass/fail table is printed even when output is captured.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use d2t::aggregation::{eval_aggregation, predict_delimiters, random_delimiters, ToyAggregator};
use d2t::backend::{
    Control, EntailmentClassifier, LexicalEntailment, ModelDims, ProcessBackend, TextGenerator, TrainConfig, Vocab,
};
use d2t::compression::{check_plan_following, format_pc_input, join_with_delimiters, train_pc_with, PcVariant};
use d2t::corpus::{build_corpus, load_corpus, CorpusBackends, CorpusConfig, HeuristicCoref, RuleSplitter, SPLITS};
use d2t::eval::{bleu, evaluate_system, EvalSettings, SystemOutput};
use d2t::facts::{is_permutation, realize_all, Delimiters, Fact, Triple};
use d2t::ordering::{eval_ordering, order_facts, pointer_step, shuffle_document, FactOrderer, PointerHead, PointerOrderer};
use d2t::pipeline::{copy_baseline, read_dataset, Pipeline, PipelineConfig};
use d2t::rng::substream;
use d2t::synthetic::{dump_jsonl, sample_entity, synthetic_corpus, synthetic_corpus_min, synthetic_dump, templates};
use d2t::text::split_sentences;
use ndarray::{array, Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const WORDS: &[&str] = &[
    "alpha", "river", "stone", "music", "green", "city", "north", "garden", "winter", "bridge", "coffee", "lantern", "silver",
    "harbor", "forest", "engine", "valley", "market", "castle", "island",
];

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..8);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    format!("{}.", words.join(" "))
}

fn random_facts(rng: &mut ChaCha8Rng, n: usize) -> Vec<Fact> {
    (0..n).map(|_| Fact::sentence(random_sentence(rng))).collect()
}

fn word_vocab() -> Vocab {
    Vocab::build(WORDS.iter().map(|w| format!("{w}.")))
}

fn small_dims() -> ModelDims {
    ModelDims {
        hidden: 16,
        heads: 2,
        ff: 32,
        layers: 2,
        max_len: 256,
    }
}

fn c1_permutations() -> Check {
    let model = PointerOrderer::new(word_vocab(), small_dims(), 1).map_err(err)?;
    let mut rng = substream(101, "c1");
    for i in 0..1000 {
        let n = rng.random_range(1..=12);
        let facts = random_facts(&mut rng, n);
        let order = order_facts(&facts, &model).map_err(|e| format!("set {i}: {e}"))?;
        ensure(order.len() == n && is_permutation(&order), || format!("set {i}: {order:?}"))?;
    }
    Ok("1000/1000 valid permutations".into())
}

fn c2_pointer_math() -> Check {
    let mut rng = substream(102, "c2");
    let mut worst: f64 = 0.0;
    for b in [2, 8, 64] {
        let head = PointerHead::identity(b);
        for n in 1..=12 {
            let row: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = Array2::from_shape_fn((n, b), |(_, j)| row[j]);
            let d = Array1::from_shape_fn(b, |_| rng.random_range(-3.0..3.0));
            let mut mask = vec![false; n];
            for m in mask.iter_mut().take(n - 1) {
                *m = rng.random_bool(0.3);
            }
            let open = mask.iter().filter(|&&m| !m).count();
            let dist = pointer_step(d.view(), &e, &head, &mask, 0).map_err(err)?;
            ensure(dist.probs.len() == n + 1 && dist.probs[n] == 0.0, || {
                "reserved slot is not zero".into()
            })?;
            for (p, &m) in dist.fact_probs().iter().zip(&mask) {
                let want = if m { 0.0 } else { 1.0 / open as f64 };
                worst = worst.max((p - want).abs());
            }
        }
    }
    ensure(worst < 1e-6, || format!("max deviation from uniform {worst:e}"))?;

    // logits 0 and ln 3 after the 1/sqrt(2) scaling
    let head = PointerHead::identity(2);
    let d = array![2f64.sqrt() * 3f64.ln(), 0.0];
    let e = array![[0.0, 0.0], [1.0, 0.0]];
    let dist = pointer_step(d.view(), &e, &head, &[false, false], 0).map_err(err)?;
    let want = [0.25, 0.75, 0.0];
    for (p, w) in dist.probs.iter().zip(want) {
        ensure((p - w).abs() < 1e-9, || format!("2-slot case gave {:?}", dist.probs))?;
    }
    Ok(format!("uniform within {worst:.1e}; 2-slot case {:?}", dist.probs))
}

fn c3_gradient_check() -> Check {
    let dims = ModelDims {
        hidden: 8,
        heads: 2,
        ff: 16,
        layers: 2,
        max_len: 64,
    };
    let mut model = PointerOrderer::new(word_vocab(), dims, 3).map_err(err)?;
    let batch = vec![(
        vec![
            "river stone music.".to_string(),
            "green city.".to_string(),
            "north garden winter bridge.".to_string(),
        ],
        vec![2, 0, 1],
    )];
    let (_, grads) = model.loss_and_grads(&batch).map_err(err)?;
    let ids: Vec<_> = model.store_mut().ids().collect();
    let mut rng = substream(103, "c3");
    let h = 1e-4;
    // Relative error with a floor: gradients below 1e-7 are compared
    // against the floor so round-off cannot dominate.
    let floor = 1e-7;
    let (mut checked, mut worst) = (0usize, 0f64);
    for id in ids {
        let shape = model.store_mut().value_mut(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                if !rng.random_bool(0.05) {
                    continue;
                }
                let orig = model.store_mut().value_mut(id)[[r, c]];
                model.store_mut().value_mut(id)[[r, c]] = orig + h;
                let (lp, _) = model.loss_and_grads(&batch).map_err(err)?;
                model.store_mut().value_mut(id)[[r, c]] = orig - h;
                let (lm, _) = model.loss_and_grads(&batch).map_err(err)?;
                model.store_mut().value_mut(id)[[r, c]] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    ensure(checked > 50, || format!("only {checked} scalars sampled"))?;
    ensure(worst < 1e-3, || {
        format!("max relative error {worst:.2e} over {checked} scalars")
    })?;
    Ok(format!("{checked} scalars, max relative error {worst:.2e}"))
}

fn c4_delimiter_law() -> Check {
    let model = ToyAggregator::new(word_vocab(), small_dims(), 4).map_err(err)?;
    let mut rng = substream(104, "c4");
    let mut lengths = BTreeSet::new();
    for i in 0..1000 {
        let n = rng.random_range(1..=12);
        let facts = random_facts(&mut rng, n);
        let d = predict_delimiters(&facts, &model).map_err(|e| format!("input {i}: {e}"))?;
        ensure(d.len() == n - 1, || {
            format!("input {i}: {} delimiters for {n} facts", d.len())
        })?;
        ensure(d.as_slice().iter().all(|&v| v <= 1), || {
            format!("input {i}: {:?}", d.as_slice())
        })?;
        lengths.insert(n);
    }
    Ok(format!("1000/1000 inputs, n in {lengths:?}"))
}

fn c5_pc_laws() -> Check {
    let mut rng = substream(105, "c5");
    for i in 0..1000 {
        let n = rng.random_range(1..=12);
        let facts = random_facts(&mut rng, n);
        let d = random_delimiters(n - 1, &mut rng);
        let input = format_pc_input(&facts, Some(&d), PcVariant::Pc, None).map_err(err)?;
        ensure(input.sep_count() == d.breaks(), || {
            format!("plan {i}: {} seps for {} breaks", input.sep_count(), d.breaks())
        })?;
        let plain: Vec<&str> = facts.iter().map(|f| f.text.as_str()).collect();
        ensure(input.without_markers() == plain.join(" "), || {
            format!("plan {i}: roundtrip gave {:?}", input.without_markers())
        })?;
    }
    Ok("1000/1000 plans".into())
}

fn probes(docs: &[Vec<String>], seed: u64) -> Vec<(Vec<String>, Vec<usize>)> {
    let mut rng = substream(seed, "probe-shuffle");
    docs.iter().map(|d| shuffle_document(d, &mut rng)).collect()
}

fn ordering_accuracy(model: &PointerOrderer, probes: &[(Vec<String>, Vec<usize>)]) -> f64 {
    let pred: Vec<Vec<usize>> = probes
        .iter()
        .map(|(p, _)| model.order_texts(&p.iter().map(String::as_str).collect::<Vec<_>>()).unwrap())
        .collect();
    let gold: Vec<Vec<usize>> = probes.iter().map(|(_, g)| g.clone()).collect();
    eval_ordering(&pred, &gold).unwrap().accuracy
}

fn c6_overfit() -> Check {
    // ordering
    let corpus = synthetic_corpus_min(7, 200, 2);
    let docs: Vec<Vec<String>> = corpus.iter().map(|c| c.sentences.clone()).collect();
    let probe = probes(&docs, 7);
    let mut ord = PointerOrderer::new(Vocab::build(docs.iter().flatten()), ModelDims::default(), 0).map_err(err)?;
    let start = Instant::now();
    let mut ord_acc = 0.0;
    ord.train(&docs, &TrainConfig::toy(), 200, |s, m| {
        if s.epoch % 5 != 4 {
            return Control::Continue;
        }
        ord_acc = ordering_accuracy(m, &probe);
        if ord_acc >= 0.95 {
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .map_err(err)?;
    let ord_time = start.elapsed();
    ord_acc = ordering_accuracy(&ord, &probe);
    let ord_epochs = ord.epochs_completed();
    ensure(ord_acc >= 0.95, || {
        format!("ordering accuracy {ord_acc:.3} after {ord_epochs} epochs")
    })?;
    ensure(ord_time < Duration::from_secs(600), || {
        format!("ordering took {ord_time:.0?}")
    })?;

    // aggregation
    let corpus = synthetic_corpus(8, 200);
    let examples: Vec<(Vec<String>, Delimiters)> = corpus.iter().map(|c| (c.sentences.clone(), c.agg_labels.clone())).collect();
    let gold: Vec<Delimiters> = examples.iter().map(|(_, d)| d.clone()).collect();
    let score = |m: &ToyAggregator| {
        let pred: Vec<Delimiters> = examples.iter().map(|(s, _)| m.predict_texts(s).unwrap()).collect();
        eval_aggregation(&pred, &gold).unwrap().per_boundary
    };
    let mut agg = ToyAggregator::new(Vocab::build(examples.iter().flat_map(|(s, _)| s)), ModelDims::default(), 0).map_err(err)?;
    agg.fit_delimiters(&examples, &TrainConfig::toy(), 200, |s, m| {
        if s.epoch % 5 == 4 && score(m) >= 0.95 {
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .map_err(err)?;
    let agg_acc = score(&agg);
    ensure(agg_acc >= 0.95, || format!("aggregation per-boundary accuracy {agg_acc:.3}"))?;

    // compression
    let corpus = synthetic_corpus(11, 100);
    let sources: Vec<String> = corpus
        .iter()
        .map(|c| join_with_delimiters(&c.sentences, Some(c.agg_labels.as_slice())))
        .collect();
    let refs: Vec<Vec<String>> = corpus.iter().map(|c| vec![c.paragraph.clone()]).collect();
    let pc_bleu = |m: &dyn TextGenerator| {
        let outs: Vec<String> = sources.iter().map(|s| m.generate_text(s).unwrap()).collect();
        bleu(&outs, &refs, 4).unwrap()
    };
    let cfg = TrainConfig {
        epochs: 300,
        ..TrainConfig::toy()
    };
    let pc = train_pc_with(&corpus, PcVariant::Pc, &cfg, ModelDims::default(), |s, m| {
        if s.epoch % 10 == 9 && pc_bleu(m) >= 90.0 {
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .map_err(err)?;
    let b = pc_bleu(&pc);
    ensure(b >= 90.0, || format!("compression BLEU {b:.2}"))?;
    Ok(format!(
        "ord acc {ord_acc:.3} at epoch {ord_epochs} in {ord_time:.0?}; agg per-boundary {agg_acc:.3}; PC BLEU {b:.2}"
    ))
}

fn c7_corpus_sweep() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dump = tmp.path().join("dump.jsonl");
    fs::write(&dump, dump_jsonl(&synthetic_dump(17, 100, false))).map_err(err)?;
    let nli = LexicalEntailment::default();
    let backends = CorpusBackends {
        splitter: &RuleSplitter,
        coref: &HeuristicCoref,
        nli: &nli,
    };
    let cfg = CorpusConfig {
        seed: 17,
        dev_size: Some(10),
        test_size: Some(10),
        ..Default::default()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let built = build_corpus(&dump, &cfg, &backends, Some(&a)).map_err(err)?;
    build_corpus(&dump, &cfg, &backends, Some(&b)).map_err(err)?;

    let mut examples = 0;
    let mut seen = BTreeSet::new();
    for split in SPLITS {
        for ex in load_corpus(&a.join("full").join(format!("{split}.jsonl"))).map_err(err)? {
            ex.validate().map_err(err)?;
            ensure(ex.agg_labels.len() + 1 == ex.sentences.len(), || {
                format!("{}: length law", ex.article_id)
            })?;
            // every paragraph sentence is the origin of a contiguous run of
            // synthesized sentences, and labels mark exactly the run changes
            let k = split_sentences(&ex.paragraph).map_err(err)?.len();
            let runs: Vec<usize> = ex.origins.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            ensure(runs == (0..k).collect::<Vec<_>>(), || {
                format!("{}: origins {:?} for {k} sentences", ex.article_id, ex.origins)
            })?;
            for (i, w) in ex.origins.windows(2).enumerate() {
                ensure(w[0] <= w[1] && ex.agg_labels.as_slice()[i] == u8::from(w[0] != w[1]), || {
                    format!("{}: label {i} breaks provenance", ex.article_id)
                })?;
            }
            ensure(seen.insert(ex.article_id.clone()), || {
                format!("{} is in two splits", ex.article_id)
            })?;
            examples += 1;
        }
    }
    // every paragraph that survives extraction is processed and emitted once
    ensure(
        examples == built.stats.extraction.kept && built.stats.skipped.is_empty() && built.stats.extraction.read == 100,
        || {
            format!(
                "{examples} examples: {:?}, skipped {:?}",
                built.stats.extraction, built.stats.skipped
            )
        },
    )?;

    let mut files = 0;
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        let other = b.join(rel);
        ensure(fs::read(&entry).map_err(err)? == fs::read(&other).map_err(err)?, || {
            format!("{} differs", rel.display())
        })?;
        files += 1;
    }
    ensure(files == walk(&b).len(), || "rebuild wrote a different file set".into())?;
    Ok(format!("{examples} examples valid; {files} files byte-identical on rebuild"))
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Corpus BLEU-4 of the fixture as computed by sacrebleu 2.6.0
/// (`tokenize="none"`, `lowercase=True`, `smooth_method="none"`).
const FIXTURE_SACREBLEU: f64 = 72.171219;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn c8_metrics() -> Check {
    let mut rng = substream(108, "c8");
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let xs: Vec<String> = (0..n)
            .map(|_| format!("{} {}", random_sentence(&mut rng), random_sentence(&mut rng)))
            .collect();
        let refs: Vec<Vec<String>> = xs.iter().map(|x| vec![x.clone()]).collect();
        let b = bleu(&xs, &refs, 4).map_err(err)?;
        ensure(b == 100.0, || format!("self-BLEU {b}"))?;
    }

    #[derive(serde::Deserialize)]
    struct Fixture {
        candidates: Vec<String>,
        references: Vec<Vec<String>>,
    }
    let path = fixture_dir().join("bleu_fixture.json");
    let fx: Fixture = serde_json::from_str(&fs::read_to_string(&path).map_err(err)?).map_err(err)?;
    let ours = bleu(&fx.candidates, &fx.references, 4).map_err(err)?;
    // Prefer a live sacrebleu run; fall back to its recorded output.
    let live = Command::new("python3")
        .arg(fixture_dir().join("bleu_reference.py"))
        .arg(&path)
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8_lossy(&o.stdout).trim().parse::<f64>().ok());
    let (theirs, source) = match live {
        Some(v) => (v, "sacrebleu live"),
        None => (FIXTURE_SACREBLEU, "sacrebleu recorded"),
    };
    ensure((ours - theirs).abs() <= 0.1, || {
        format!("BLEU {ours:.4} vs {source} {theirs:.4}")
    })?;
    ensure((ours - FIXTURE_SACREBLEU).abs() <= 0.1, || {
        format!("BLEU {ours:.4} vs recorded {FIXTURE_SACREBLEU}")
    })?;

    // Means: facts per output 2, 3, 1, 4 with omissions 0, 1, 1, 2 and one
    // hallucinated output gives 4/10 and 1/4.
    // entailment iff every hypothesis token occurs in the premise
    struct Scripted;
    impl EntailmentClassifier for Scripted {
        fn probabilities(&self, premise: &str, hypothesis: &str) -> d2t::Result<[f64; 3]> {
            let p: BTreeSet<&str> = premise.split_whitespace().collect();
            let entails = hypothesis.split_whitespace().all(|w| p.contains(w));
            Ok(if entails { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] })
        }
    }
    let fact = |o: &str| Fact::sentence(o.to_string());
    let outputs = vec![
        SystemOutput {
            id: "a".into(),
            output: "x1 x2".into(),
            facts: vec![fact("x1"), fact("x2")],
        },
        SystemOutput {
            id: "b".into(),
            output: "y1 y2".into(),
            facts: vec![fact("y1"), fact("y2"), fact("y3")],
        },
        SystemOutput {
            id: "c".into(),
            output: "extra".into(),
            facts: vec![fact("z1")],
        },
        SystemOutput {
            id: "d".into(),
            output: "w1 w2".into(),
            facts: vec![fact("w1"), fact("w2"), fact("w3"), fact("w4")],
        },
    ];
    let refs: Vec<Vec<String>> = outputs.iter().map(|o| vec![o.output.clone()]).collect();
    let settings = EvalSettings {
        system_tag: "fixture".into(),
        nli: Some(&Scripted),
        meteor: None,
        details: None,
    };
    let (report, scores) = evaluate_system(&outputs, &refs, &settings).map_err(err)?;
    let omitted: usize = scores.iter().map(|s| s.semantic.unwrap().omissions).sum();
    let facts: usize = scores.iter().map(|s| s.facts).sum();
    let halluc = scores.iter().filter(|s| s.semantic.unwrap().hallucinated).count();
    ensure(omitted == 4 && facts == 10 && halluc == 1, || {
        format!("counts {omitted}/{facts}, {halluc} hallucinated")
    })?;
    ensure(report.omissions_per_fact == Some(0.4), || {
        format!("omission mean {:?}", report.omissions_per_fact)
    })?;
    ensure(report.hallucinations_per_example == Some(0.25), || {
        format!("hallucination mean {:?}", report.hallucinations_per_example)
    })?;
    Ok(format!(
        "self-BLEU 100; fixture {ours:.4} vs {source} {theirs:.4}; O 0.4, H 0.25"
    ))
}

/// One sentence per delimiter group: the group's facts joined by "and".
fn faithful_output(facts: &[Fact], delimiters: &Delimiters) -> String {
    let mut sentences = Vec::new();
    let mut group: Vec<String> = Vec::new();
    for (i, f) in facts.iter().enumerate() {
        group.push(f.text.trim_end_matches('.').to_string());
        if i + 1 == facts.len() || delimiters.as_slice()[i] == 1 {
            sentences.push(format!("{}.", group.join(" and ")));
            group.clear();
        }
    }
    sentences.join(" ")
}

fn c9_plan_following() -> Check {
    let registry = templates();
    let allen = realize_all(
        &[
            Triple::new("Allen Forrest", "occupation", "singer").map_err(err)?,
            Triple::new("Allen Forrest", "genre", "pop").map_err(err)?,
            Triple::new("Allen Forrest", "birthPlace", "Fort Campbell").map_err(err)?,
        ],
        &registry,
    )
    .map_err(err)?;
    let d = Delimiters::new(vec![0, 1]).map_err(err)?;
    let fixture = "Allen Forrest is a singer who performs pop music. He was born in Fort Campbell.";
    let r = check_plan_following(fixture, &allen, &d, None).map_err(err)?;
    ensure(r.order_ok && r.boundary_ok, || format!("faithful fixture gave {r:?}"))?;
    let swapped = "Allen Forrest was born in Fort Campbell. He is a singer who performs pop music.";
    let r = check_plan_following(swapped, &allen, &d, None).map_err(err)?;
    ensure(!r.order_ok, || format!("swapped fixture gave {r:?}"))?;

    let mut rng = substream(109, "c9");
    let mut cases = 0;
    while cases < 50 {
        let e = sample_entity(&mut rng);
        if e.triples.len() < 2 {
            continue;
        }
        let facts = realize_all(&e.triples, &registry).map_err(err)?;
        let d = random_delimiters(facts.len() - 1, &mut rng);
        let out = faithful_output(&facts, &d);
        let r = check_plan_following(&out, &facts, &d, None).map_err(err)?;
        ensure(r.order_ok && r.boundary_ok, || format!("case {cases}: {out:?} gave {r:?}"))?;
        let mut reversed = facts.clone();
        reversed.reverse();
        let out = faithful_output(&reversed, &d);
        let r = check_plan_following(&out, &facts, &d, None).map_err(err)?;
        ensure(!r.order_ok, || format!("case {cases}: swapped {out:?} gave {r:?}"))?;
        cases += 1;
    }
    Ok("fixture and 50/50 generated cases".into())
}

fn c10_random_baseline() -> Check {
    let mut rng = substream(110, "c10");
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut total = 0;
    let corpus = synthetic_corpus(110, 4000);
    for ex in corpus.iter().cycle() {
        if total >= 10_000 {
            break;
        }
        total += ex.agg_labels.len();
        pred.push(random_delimiters(ex.agg_labels.len(), &mut rng));
        gold.push(ex.agg_labels.clone());
    }
    let s = eval_aggregation(&pred, &gold).map_err(err)?;
    ensure((s.per_boundary - 0.5).abs() <= 0.02, || {
        format!("random per-boundary accuracy {:.4}", s.per_boundary)
    })?;
    Ok(format!("{:.4} over {} boundaries", s.per_boundary, s.boundaries))
}

fn env_path(name: &str) -> Option<PathBuf> {
    std::env::var_os(name).map(PathBuf::from)
}

fn nli_from_env() -> Option<std::result::Result<ProcessBackend, String>> {
    let spec = std::env::var("D2T_NLI").ok()?;
    Some(match spec.strip_prefix("cmd:") {
        Some(cmd) => ProcessBackend::from_command_line(cmd).map_err(err),
        None => Err(format!("D2T_NLI must be cmd:<command line>, got {spec:?}")),
    })
}

fn pipeline_config(path: &Path) -> std::result::Result<PipelineConfig, String> {
    toml::from_str(&fs::read_to_string(path).map_err(err)?).map_err(err)
}

/// Runs a pipeline over a dataset and scores it with the NLI backend.
fn full_system(
    data: &Path,
    pipeline: &Path,
    nli: &ProcessBackend,
    copy: bool,
) -> std::result::Result<d2t::eval::EvalReport, String> {
    let cfg = pipeline_config(pipeline)?;
    let system = if copy {
        None
    } else {
        Some(Pipeline::load(&cfg).map_err(err)?)
    };
    let registry = d2t::facts::load_templates(&cfg.templates, &cfg.dataset_id).map_err(err)?;
    let mut outputs = Vec::new();
    let mut refs = Vec::new();
    for rec in read_dataset(data).map_err(err)? {
        let rec = rec.map_err(err)?;
        let triples = rec.triples().map_err(err)?;
        let facts = realize_all(&triples, &registry).map_err(err)?;
        let output = match &system {
            Some(p) => p.run(&rec.id, &triples).map_err(err)?.output,
            None => copy_baseline(&triples, &registry).map_err(err)?,
        };
        outputs.push(SystemOutput {
            id: rec.id.clone(),
            output,
            facts,
        });
        refs.push(rec.references.clone());
    }
    let settings = EvalSettings {
        system_tag: cfg.stages.to_string(),
        nli: Some(nli),
        meteor: None,
        details: None,
    };
    Ok(evaluate_system(&outputs, &refs, &settings).map_err(err)?.0)
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{name} {got:.4}, expected {want} +- {tol}")
    })
}

fn c11_webnlg() -> Outcome {
    let (Some(data), Some(pipe), Some(nli)) = (env_path("D2T_WEBNLG_DATA"), env_path("D2T_WEBNLG_PIPELINE"), nli_from_env())
    else {
        return Outcome::Skip("set D2T_WEBNLG_DATA, D2T_WEBNLG_PIPELINE and D2T_NLI".into());
    };
    outcome((|| {
        let r = full_system(&data, &pipe, &nli?, false)?;
        within("BLEU", r.bleu, 43.19, 1.0)?;
        within("omissions/fact", r.omissions_per_fact.unwrap_or(f64::NAN), 0.152, 0.03)?;
        within(
            "hallucinations/example",
            r.hallucinations_per_example.unwrap_or(f64::NAN),
            0.073,
            0.03,
        )?;
        Ok(format!("{r:?}"))
    })())
}

fn c12_e2e() -> Outcome {
    let (Some(data), Some(pipe), Some(nli)) = (env_path("D2T_E2E_DATA"), env_path("D2T_E2E_PIPELINE"), nli_from_env()) else {
        return Outcome::Skip("set D2T_E2E_DATA, D2T_E2E_PIPELINE and D2T_NLI".into());
    };
    outcome((|| {
        let r = full_system(&data, &pipe, &nli?, false)?;
        within("BLEU", r.bleu, 36.04, 1.0)?;
        let (o, h) = (
            r.omissions_per_fact.unwrap_or(f64::NAN),
            r.hallucinations_per_example.unwrap_or(f64::NAN),
        );
        ensure(o <= 0.01 && h <= 0.01, || format!("O {o:.4}, H {h:.4}"))?;
        Ok(format!("{r:?}"))
    })())
}

#[derive(serde::Deserialize)]
struct GoldPlan {
    facts: Vec<String>,
    gold: Vec<usize>,
}

fn c13_plans() -> Outcome {
    let (Some(model), Some(plans)) = (std::env::var("D2T_ORD_MODEL").ok(), env_path("D2T_WEBNLG_PLANS")) else {
        return Outcome::Skip("set D2T_ORD_MODEL and D2T_WEBNLG_PLANS".into());
    };
    outcome((|| {
        let orderer: Box<dyn FactOrderer> = match model.strip_prefix("cmd:") {
            Some(cmd) => Box::new(ProcessBackend::from_command_line(cmd).map_err(err)?),
            None => Box::new(PointerOrderer::load(Path::new(&model)).map_err(err)?),
        };
        let lines: Vec<GoldPlan> = d2t::eval::read_jsonl(&plans)
            .map_err(err)?
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        let mut rng = substream(113, "random-plan-baseline");
        let (mut pred, mut random, mut gold) = (Vec::new(), Vec::new(), Vec::new());
        for p in &lines {
            let facts: Vec<Fact> = p.facts.iter().cloned().map(Fact::sentence).collect();
            pred.push(order_facts(&facts, orderer.as_ref()).map_err(err)?);
            let mut r: Vec<usize> = (0..p.gold.len()).collect();
            r.shuffle(&mut rng);
            random.push(r);
            gold.push(p.gold.clone());
        }
        let s = eval_ordering(&pred, &gold).map_err(err)?;
        let r = eval_ordering(&random, &gold).map_err(err)?;
        within("BLEU-2", s.bleu2, 59.10, 2.0)?;
        within("accuracy", s.accuracy, 0.48, 0.03)?;
        within("random BLEU-2", r.bleu2, 47.00, 2.0)?;
        within("random accuracy", r.accuracy, 0.29, 0.03)?;
        Ok(format!("system {s:?}; random {r:?}"))
    })())
}

fn c14_copy_baseline() -> Outcome {
    let sets = [
        ("D2T_WEBNLG_DATA", "D2T_WEBNLG_PIPELINE"),
        ("D2T_E2E_DATA", "D2T_E2E_PIPELINE"),
    ];
    let Some(nli) = nli_from_env() else {
        return Outcome::Skip("set D2T_NLI with D2T_WEBNLG_* and D2T_E2E_*".into());
    };
    if sets.iter().any(|(d, p)| env_path(d).is_none() || env_path(p).is_none()) {
        return Outcome::Skip("set D2T_NLI with D2T_WEBNLG_* and D2T_E2E_*".into());
    }
    outcome((|| {
        let nli = nli?;
        let mut notes = Vec::new();
        for (d, p) in sets {
            let r = full_system(&env_path(d).unwrap(), &env_path(p).unwrap(), &nli, true)?;
            ensure(
                r.omissions_per_fact == Some(0.0) && r.hallucinations_per_example == Some(0.0),
                || format!("{d}: O {:?}, H {:?}", r.omissions_per_fact, r.hallucinations_per_example),
            )?;
            notes.push(format!("{d}: O 0, H 0"));
        }
        Ok(notes.join("; "))
    })())
}

fn c15_wikifluent() -> Outcome {
    let Some(dir) = env_path("D2T_WIKI_CORPUS_DIR") else {
        return Outcome::Skip("set D2T_WIKI_CORPUS_DIR".into());
    };
    outcome((|| {
        let stats: d2t::corpus::CorpusStats =
            serde_json::from_str(&fs::read_to_string(dir.join("stats.json")).map_err(err)?).map_err(err)?;
        within("retention", stats.retention, 0.75, 0.05)?;
        let full = stats.full.get("train").ok_or("stats.json has no train split")?;
        for (name, got, want) in [
            ("tokens/source", full.tokens_per_source, 52.9),
            ("tokens/target", full.tokens_per_target, 41.1),
            ("sentences/source", full.sentences_per_source, 3.9),
            ("sentences/target", full.sentences_per_target, 2.0),
        ] {
            within(name, got, want, want * 0.1)?;
        }
        Ok(format!("retention {:.3}; train {full:?}", stats.retention))
    })())
}

fn outcome(r: Check) -> Outcome {
    match r {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

#[test]
fn acceptance() {
    let desk: [(&str, fn() -> Check); 10] = [
        ("permutation validity", c1_permutations),
        ("pointer math oracle", c2_pointer_math),
        ("gradient check", c3_gradient_check),
        ("delimiter law", c4_delimiter_law),
        ("PC input laws", c5_pc_laws),
        ("overfit oracles", c6_overfit),
        ("corpus builder sweep", c7_corpus_sweep),
        ("metric sanity", c8_metrics),
        ("plan-following harness", c9_plan_following),
        ("random aggregation baseline", c10_random_baseline),
    ];
    let full: [(&str, fn() -> Outcome); 5] = [
        ("WebNLG 3-stage filtered", c11_webnlg),
        ("E2E 3-stage full", c12_e2e),
        ("ordering vs gold plans", c13_plans),
        ("copy baseline semantics", c14_copy_baseline),
        ("corpus retention and averages", c15_wikifluent),
    ];
    let mut results = Vec::new();
    for (name, f) in desk {
        let start = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        results.push((name, outcome(r), start.elapsed()));
    }
    for (name, f) in full {
        let start = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        results.push((name, r, start.elapsed()));
    }
    let mut failed = Vec::new();
    writeln!(std::io::stdout().lock()).unwrap();
    for (i, (name, r, t)) in results.iter().enumerate() {
        let (tag, msg) = match r {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => {
                failed.push(i + 1);
                ("FAIL", m)
            }
            Outcome::Skip(m) => ("SKIP", m),
        };
        // written past the test harness capture so the table always shows
        writeln!(std::io::stdout().lock(), "[{tag}] {:>2}. {name} ({t:.1?}): {msg}", i + 1).unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
