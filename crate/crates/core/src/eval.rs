//! Automatic metrics: corpus BLEU, NLI-based omission and hallucination
//! counts, and the intrinsic per-module table.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{eval_aggregation, predict_delimiters, AggregationScores, DelimiterPredictor};
use crate::backend::{entails, EntailmentClassifier, TextGenerator};
use crate::compression::{compress, pc_training_source, PcInput, PcVariant};
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};
use crate::facts::Fact;
use crate::ordering::{eval_ordering, order_facts, shuffle_document, FactOrderer, OrderingScores};
use crate::rng::substream;
use crate::text::tokenize;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU over pre-tokenized text, uniform weights, no smoothing and
/// the closest-reference brevity penalty. Returns a value in [0, 100].
pub fn bleu_tokens(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], max_ngram: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Input("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Input(format!(
            "{} candidates for {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if max_ngram == 0 {
        return Err(Error::Input("max n-gram order must be positive".into()));
    }
    let mut matches = vec![0usize; max_ngram];
    let mut totals = vec![0usize; max_ngram];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::Input(format!("example {i} has no reference")));
        }
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap();
        for n in 1..=max_ngram {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in ngram_counts(cand, n) {
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    if matches.contains(&0) || cand_len == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_ngram as f64;
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_p.exp())
}

fn bleu_tokenize(text: &str) -> Vec<String> {
    tokenize(&text.to_lowercase())
}

/// Corpus BLEU over raw strings (lowercased and tokenized).
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[Vec<R>], max_ngram: usize) -> Result<f64> {
    let c: Vec<Vec<String>> = candidates.iter().map(|s| bleu_tokenize(s.as_ref())).collect();
    let r: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|set| set.iter().map(|s| bleu_tokenize(s.as_ref())).collect())
        .collect();
    bleu_tokens(&c, &r, max_ngram)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticAccuracy {
    pub omissions: usize,
    pub hallucinated: bool,
}

/// Omissions are facts the output does not entail (each fact counted at
/// most once); the output is hallucinated when the joined facts do not
/// entail it.
pub fn semantic_accuracy(output: &str, facts: &[Fact], nli: &dyn EntailmentClassifier) -> Result<SemanticAccuracy> {
    if output.trim().is_empty() {
        return Err(Error::Input("cannot score an empty output".into()));
    }
    let mut omissions = 0;
    for f in facts {
        if !entails(nli, output, &f.text)?.is_entailment() {
            omissions += 1;
        }
    }
    let joined = facts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join(" ");
    let hallucinated = !joined.is_empty() && !entails(nli, &joined, output)?.is_entailment();
    Ok(SemanticAccuracy { omissions, hallucinated })
}

/// External METEOR scorer.
pub trait MeteorScorer: Send + Sync {
    fn score(&self, candidates: &[String], references: &[Vec<String>]) -> Result<f64>;
}

/// Runs `program args... HYP REF` where HYP holds one candidate per line
/// and REF one reference per line (multiple references of an example are
/// consecutive, every example padded to the same count). The last number
/// printed on stdout is the score.
pub struct CommandMeteor {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandMeteor {
    pub fn from_command_line(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| Error::Config("empty METEOR command".into()))?;
        Ok(CommandMeteor {
            program,
            args: parts.collect(),
        })
    }
}

impl MeteorScorer for CommandMeteor {
    fn score(&self, candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let width = references.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let hyp = dir.path().join("hyp.txt");
        let refs = dir.path().join("ref.txt");
        fs::write(&hyp, candidates.join("\n") + "\n").map_err(|e| Error::io(&hyp, e))?;
        let mut lines = Vec::new();
        for set in references {
            for k in 0..width {
                lines.push(set.get(k).or(set.first()).cloned().unwrap_or_default());
            }
        }
        fs::write(&refs, lines.join("\n") + "\n").map_err(|e| Error::io(&refs, e))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&hyp)
            .arg(&refs)
            .output()
            .map_err(|e| Error::Backend(format!("cannot run {}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(Error::Backend(format!("{} exited with {}", self.program, out.status)));
        }
        String::from_utf8_lossy(&out.stdout)
            .split_whitespace()
            .rev()
            .find_map(|t| t.parse::<f64>().ok())
            .ok_or_else(|| Error::Backend(format!("{} printed no score", self.program)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub meteor: Option<f64>,
    /// Absent when no entailment backend was configured.
    pub omissions_per_fact: Option<f64>,
    pub hallucinations_per_example: Option<f64>,
    pub n_examples: usize,
    pub system_tag: String,
}

/// Per-example detail behind an `EvalReport`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub facts: usize,
    pub semantic: Option<SemanticAccuracy>,
}

/// One system output with the facts it was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub id: String,
    pub output: String,
    #[serde(default)]
    pub facts: Vec<Fact>,
}

pub struct EvalSettings<'a> {
    pub system_tag: String,
    pub nli: Option<&'a dyn EntailmentClassifier>,
    pub meteor: Option<&'a dyn MeteorScorer>,
    pub details: Option<PathBuf>,
}

/// Scores aligned outputs against reference sets. Omission rate is the
/// total omission count over the total fact count; hallucination rate is
/// the fraction of hallucinated outputs.
pub fn evaluate_system(
    outputs: &[SystemOutput],
    references: &[Vec<String>],
    settings: &EvalSettings,
) -> Result<(EvalReport, Vec<ExampleScore>)> {
    if outputs.len() != references.len() {
        return Err(Error::Input(format!(
            "{} outputs for {} reference sets",
            outputs.len(),
            references.len()
        )));
    }
    let cands: Vec<&str> = outputs.iter().map(|o| o.output.as_str()).collect();
    let bleu4 = bleu(&cands, references, 4)?;
    let meteor = match settings.meteor {
        Some(m) => Some(m.score(&outputs.iter().map(|o| o.output.clone()).collect::<Vec<_>>(), references)?),
        None => None,
    };
    let semantic: Vec<Option<SemanticAccuracy>> = match settings.nli {
        Some(nli) => outputs
            .par_iter()
            .map(|o| {
                semantic_accuracy(&o.output, &o.facts, nli)
                    .map(Some)
                    .map_err(|e| Error::Input(format!("{}: {e}", o.id)))
            })
            .collect::<Result<_>>()?,
        None => vec![None; outputs.len()],
    };
    let scores: Vec<ExampleScore> = outputs
        .iter()
        .zip(semantic)
        .map(|(o, s)| ExampleScore {
            id: o.id.clone(),
            facts: o.facts.len(),
            semantic: s,
        })
        .collect();
    let (omissions_per_fact, hallucinations_per_example) = if settings.nli.is_some() {
        let facts: usize = scores.iter().map(|s| s.facts).sum();
        let omitted: usize = scores.iter().filter_map(|s| s.semantic).map(|s| s.omissions).sum();
        let halluc = scores.iter().filter_map(|s| s.semantic).filter(|s| s.hallucinated).count();
        (
            Some(if facts == 0 { 0.0 } else { omitted as f64 / facts as f64 }),
            Some(halluc as f64 / scores.len() as f64),
        )
    } else {
        (None, None)
    };
    if let Some(path) = &settings.details {
        write_details(path, &scores)?;
    }
    Ok((
        EvalReport {
            bleu: bleu4,
            meteor,
            omissions_per_fact,
            hallucinations_per_example,
            n_examples: outputs.len(),
            system_tag: settings.system_tag.clone(),
        },
        scores,
    ))
}

fn write_details(path: &Path, scores: &[ExampleScore]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("id\tfacts\tomissions\thallucinated\n");
    for s in scores {
        let (o, h) = match s.semantic {
            Some(sa) => (sa.omissions.to_string(), sa.hallucinated.to_string()),
            None => ("-".into(), "-".into()),
        };
        text.push_str(&format!("{}\t{}\t{o}\t{h}\n", s.id, s.facts));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ReferenceLine {
    id: String,
    #[serde(default)]
    references: Vec<String>,
    #[serde(default)]
    reference: Option<String>,
}

/// Reads `{id, references: [...]}` or `{id, reference}` lines.
pub fn load_references(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (line, r) in read_jsonl::<ReferenceLine>(path)? {
        let mut refs = r.references;
        refs.extend(r.reference);
        if refs.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "no reference text".into(),
            });
        }
        out.insert(r.id, refs);
    }
    Ok(out)
}

/// Every non-blank line parsed as `T`, with 1-based line numbers.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map(|v| (i + 1, v)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Pairs outputs with references by id, keeping output order.
pub fn align<'a>(outputs: &'a [SystemOutput], references: &BTreeMap<String, Vec<String>>) -> Result<Vec<Vec<String>>> {
    outputs
        .iter()
        .map(|o| {
            references
                .get(&o.id)
                .cloned()
                .ok_or_else(|| Error::Input(format!("no reference for output {:?}", o.id)))
        })
        .collect()
}

pub struct IntrinsicModels<'a> {
    pub orderer: Option<&'a dyn FactOrderer>,
    pub aggregator: Option<&'a dyn DelimiterPredictor>,
    pub compressor: Option<(&'a dyn TextGenerator, PcVariant)>,
    pub meteor: Option<&'a dyn MeteorScorer>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub ordering: Option<OrderingScores>,
    pub aggregation: Option<AggregationScores>,
    pub pc_bleu: Option<f64>,
    pub pc_meteor: Option<f64>,
    pub n_examples: usize,
}

/// Module-level scores on held-out corpus examples. Ordering sees each
/// example's sentences shuffled, aggregation and compression see them in
/// gold order (compression additionally gets gold delimiters).
pub fn intrinsic_eval(test: &[CorpusExample], models: &IntrinsicModels, seed: u64) -> Result<IntrinsicReport> {
    if test.is_empty() {
        return Err(Error::Input("intrinsic evaluation needs a non-empty test split".into()));
    }
    for ex in test {
        ex.validate()?;
    }
    let mut report = IntrinsicReport {
        n_examples: test.len(),
        ..Default::default()
    };
    if let Some(orderer) = models.orderer {
        let mut rng = substream(seed, "intrinsic-order-shuffle");
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for ex in test {
            let (shuffled, g) = shuffle_document(&ex.sentences, &mut rng);
            let facts: Vec<Fact> = shuffled.into_iter().map(Fact::sentence).collect();
            pred.push(order_facts(&facts, orderer)?);
            gold.push(g);
        }
        report.ordering = Some(eval_ordering(&pred, &gold)?);
    }
    if let Some(agg) = models.aggregator {
        let mut pred = Vec::new();
        for ex in test {
            let facts: Vec<Fact> = ex.sentences.iter().cloned().map(Fact::sentence).collect();
            pred.push(predict_delimiters(&facts, agg)?);
        }
        let gold: Vec<_> = test.iter().map(|e| e.agg_labels.clone()).collect();
        report.aggregation = Some(eval_aggregation(&pred, &gold)?);
    }
    if let Some((pc, variant)) = models.compressor {
        let mut rng = substream(seed, "intrinsic-pc-shuffle");
        let mut outputs = Vec::new();
        for ex in test {
            let input = PcInput {
                text: pc_training_source(ex, variant, &mut rng),
                variant,
            };
            outputs.push(compress(&input, pc)?);
        }
        let refs: Vec<Vec<String>> = test.iter().map(|e| vec![e.paragraph.clone()]).collect();
        report.pc_bleu = Some(bleu(&outputs, &refs, 4)?);
        if let Some(m) = models.meteor {
            report.pc_meteor = Some(m.score(&outputs, &refs)?);
        }
    }
    Ok(report)
}
