//! Synthetic parallel corpus construction from encyclopedia paragraphs:
//! extraction, split-and-rephrase, coreference replacement and entailment
//! filtering.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use strsim::normalized_levenshtein;

use crate::backend::{entails, write_json, EntailmentClassifier, TextGenerator};
use crate::error::{Error, Result};
use crate::facts::Delimiters;
use crate::rng::substream;
use crate::text::{normalize_whitespace, split_sentences, tokenize};

/// Similarity at or above which a split is treated as a copy of its input.
pub const DUPLICATE_SIMILARITY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawParagraph {
    pub article_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

/// Character-length ranges `[30,130) [130,230) [230,330) [330,430]` with an
/// equal quota each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBuckets {
    pub boundaries: [usize; 5],
    pub quota: usize,
}

impl Default for LengthBuckets {
    fn default() -> Self {
        LengthBuckets {
            boundaries: [30, 130, 230, 330, 430],
            quota: 250_000,
        }
    }
}

impl LengthBuckets {
    pub fn with_quota(quota: usize) -> Self {
        LengthBuckets {
            quota,
            ..Self::default()
        }
    }

    /// Bucket index of a character length; the last range is closed.
    pub fn bucket(&self, chars: usize) -> Option<usize> {
        let b = &self.boundaries;
        if chars < b[0] || chars > b[4] {
            return None;
        }
        Some((1..4).take_while(|&i| chars >= b[i]).count())
    }
}

/// Why `extract_paragraphs` dropped paragraphs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub read: usize,
    pub kept: usize,
    pub out_of_range: usize,
    pub lists: usize,
    pub disambiguation: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub over_quota: usize,
}

fn is_list(text: &str) -> bool {
    text.contains('•')
        || text.lines().any(|l| {
            let l = l.trim_start();
            l.starts_with("* ") || l.starts_with("- ") || l.starts_with('#') || l.starts_with("• ")
        })
}

fn is_malformed(text: &str) -> bool {
    let alpha_words = tokenize(text).iter().filter(|t| t.chars().all(char::is_alphabetic)).count();
    if alpha_words < 4 {
        return true;
    }
    for (open, close) in [('(', ')'), ('[', ']'), ('{', '}')] {
        let mut depth = 0i64;
        for c in text.chars() {
            if c == open {
                depth += 1;
            } else if c == close {
                depth -= 1;
                if depth < 0 {
                    return true;
                }
            }
        }
        if depth != 0 {
            return true;
        }
    }
    false
}

fn read_dump(path: &Path) -> Result<Vec<RawParagraph>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if jsonl {
            out.push(serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?);
        } else {
            let cols: Vec<&str> = line.split('\t').collect();
            let (article_id, title, text) = match cols.as_slice() {
                [id, text] => (id, None, text),
                [id, title, text] => (id, Some(title.to_string()), text),
                _ => return Err(parse_err("expected article_id<TAB>[title<TAB>]text".into())),
            };
            out.push(RawParagraph {
                article_id: article_id.to_string(),
                title,
                text: text.replace("\\n", "\n"),
            });
        }
    }
    Ok(out)
}

/// Reads a paragraph dump (JSONL `{article_id, title?, text}` or TSV
/// `article_id [title] text`) and applies the length, list, disambiguation,
/// malformation, duplicate and quota filters in input order.
pub fn extract_paragraphs(dump: &Path, buckets: &LengthBuckets) -> Result<(Vec<RawParagraph>, ExtractStats)> {
    let records = read_dump(dump)?;
    let mut stats = ExtractStats {
        read: records.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut filled = [0usize; 4];
    let mut out = Vec::new();
    for mut rec in records {
        rec.text = rec.text.trim().to_string();
        let Some(bucket) = buckets.bucket(rec.text.chars().count()) else {
            stats.out_of_range += 1;
            continue;
        };
        if rec
            .title
            .as_deref()
            .is_some_and(|t| t.trim_end().ends_with("(disambiguation)"))
        {
            stats.disambiguation += 1;
            continue;
        }
        if is_list(&rec.text) {
            stats.lists += 1;
            continue;
        }
        if is_malformed(&rec.text) {
            stats.malformed += 1;
            continue;
        }
        if !seen.insert(rec.text.clone()) {
            stats.duplicates += 1;
            continue;
        }
        if filled[bucket] >= buckets.quota {
            stats.over_quota += 1;
            continue;
        }
        filled[bucket] += 1;
        rec.text = normalize_whitespace(&rec.text);
        out.push(rec);
    }
    stats.kept = out.len();
    Ok((out, stats))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub omission: bool,
    pub hallucination: bool,
}

/// One training unit: simple sentences (source) for a human paragraph
/// (target).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusExample {
    pub article_id: String,
    pub paragraph: String,
    pub sentences: Vec<String>,
    pub agg_labels: Delimiters,
    /// Index of the paragraph sentence each synthesized sentence came from.
    pub origins: Vec<usize>,
    pub kept: bool,
    pub flags: Flags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

impl CorpusExample {
    /// Builds an example from synthesized sentences and their origins;
    /// labels follow from the origins.
    pub fn from_origins(article_id: &str, paragraph: &str, sentences: Vec<String>, origins: Vec<usize>) -> Result<Self> {
        if sentences.is_empty() || sentences.len() != origins.len() {
            return Err(Error::CorruptExample(format!(
                "{} sentences with {} origins",
                sentences.len(),
                origins.len()
            )));
        }
        let labels = origins.windows(2).map(|w| u8::from(w[0] != w[1])).collect();
        Ok(CorpusExample {
            article_id: article_id.to_string(),
            paragraph: paragraph.to_string(),
            sentences,
            agg_labels: Delimiters::new(labels)?,
            origins,
            kept: true,
            flags: Flags::default(),
            reject_reason: None,
        })
    }

    /// Builds an example from sentences and gold labels (origins are
    /// reconstructed from the labels).
    pub fn from_labels(article_id: &str, paragraph: &str, sentences: Vec<String>, labels: &[u8]) -> Result<Self> {
        if labels.len() + 1 != sentences.len() {
            return Err(Error::CorruptExample(format!(
                "{} labels for {} sentences",
                labels.len(),
                sentences.len()
            )));
        }
        let mut origins = vec![0];
        for &l in labels {
            origins.push(origins.last().unwrap() + l as usize);
        }
        Self::from_origins(article_id, paragraph, sentences, origins)
    }

    #[cfg(test)]
    pub(crate) fn for_test(sentences: &[&str], labels: &[u8], paragraph: &str) -> Self {
        Self::from_labels("t", paragraph, sentences.iter().map(|s| s.to_string()).collect(), labels).unwrap()
    }

    /// Label length law and label/provenance agreement.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorruptExample(format!("{}: {m}", self.article_id)));
        if self.sentences.is_empty() {
            return bad("no sentences".into());
        }
        if self.agg_labels.len() + 1 != self.sentences.len() {
            return bad(format!(
                "{} labels for {} sentences",
                self.agg_labels.len(),
                self.sentences.len()
            ));
        }
        if self.origins.len() != self.sentences.len() {
            return bad("origins do not align with sentences".into());
        }
        for (i, w) in self.origins.windows(2).enumerate() {
            if w[1] < w[0] || u8::from(w[0] != w[1]) != self.agg_labels.as_slice()[i] {
                return bad(format!("label {i} disagrees with sentence provenance"));
            }
        }
        Ok(())
    }
}

/// Reads a corpus JSONL file and validates every example.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusExample>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: CorpusExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

fn is_duplicate_split(input: &str, parts: &[String]) -> bool {
    let input = normalize_whitespace(input);
    normalized_levenshtein(&normalize_whitespace(&parts.join(" ")), &input) >= DUPLICATE_SIMILARITY
        || parts
            .iter()
            .any(|p| normalized_levenshtein(&normalize_whitespace(p), &input) >= DUPLICATE_SIMILARITY)
}

/// Applies the split model `depth` times, each time to every sentence
/// produced so far. A sentence whose split fails, yields one sentence or
/// copies its input is kept as is and not split further.
pub fn split_and_rephrase(sentence: &str, model: &dyn TextGenerator, depth: usize) -> Vec<String> {
    let mut current: Vec<(String, bool)> = vec![(sentence.to_string(), false)];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (s, done) in current {
            if done {
                next.push((s, true));
                continue;
            }
            let parts = match model.generate_text(&s).and_then(|out| split_sentences(&out)) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("split failed for {s:?}: {e}");
                    next.push((s, true));
                    continue;
                }
            };
            if parts.len() < 2 || is_duplicate_split(&s, &parts) {
                next.push((s, true));
            } else {
                next.extend(parts.into_iter().map(|p| (p, false)));
            }
        }
        current = next;
    }
    current.into_iter().map(|(s, _)| s).collect()
}

/// A mention span: byte range inside one sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

/// Groups mentions that refer to the same entity.
pub trait CorefResolver: Send + Sync {
    fn clusters(&self, sentences: &[String]) -> Result<Vec<Vec<Mention>>>;
}

const PRONOUNS: &[&str] = &[
    "he", "she", "it", "they", "him", "her", "them", "his", "hers", "its", "their", "theirs", "i", "we", "you", "me", "us",
];

fn is_pronoun(text: &str) -> bool {
    PRONOUNS.contains(&text.to_lowercase().as_str())
}

fn is_possessive(text: &str, at_sentence_start: bool) -> bool {
    match text.to_lowercase().as_str() {
        "his" | "its" | "their" => true,
        "her" => at_sentence_start,
        _ => false,
    }
}

/// Replaces every non-first mention of each cluster by the cluster's first
/// mention. Clusters whose first mention is a pronoun are left alone;
/// possessive pronouns become `X's`.
pub fn replace_coreferences(sentences: &[String], resolver: &dyn CorefResolver) -> Result<Vec<String>> {
    let clusters = resolver.clusters(sentences)?;
    let mut edits: Vec<Vec<(usize, usize, String)>> = vec![Vec::new(); sentences.len()];
    for mut cluster in clusters {
        cluster.sort_by_key(|m| (m.sentence, m.start));
        let Some(first) = cluster.first().copied() else { continue };
        let span = |m: &Mention| -> Result<&str> {
            sentences
                .get(m.sentence)
                .and_then(|s| s.get(m.start..m.end))
                .ok_or_else(|| Error::Backend(format!("mention {m:?} is out of range")))
        };
        let representative = span(&first)?.to_string();
        if is_pronoun(&representative) {
            continue;
        }
        for m in &cluster[1..] {
            let text = span(m)?;
            if !is_pronoun(text) {
                continue;
            }
            let replacement = if is_possessive(text, m.start == 0) {
                format!("{representative}'s")
            } else {
                representative.clone()
            };
            edits[m.sentence].push((m.start, m.end, replacement));
        }
    }
    Ok(sentences
        .iter()
        .zip(edits)
        .map(|(s, mut e)| {
            e.sort_by_key(|x| std::cmp::Reverse(x.0));
            let mut s = s.clone();
            for (start, end, r) in e {
                s.replace_range(start..end, &r);
            }
            s
        })
        .collect())
}

/// Single-entity heuristic: the leading capitalised words of the first
/// sentence are the entity and every third-person pronoun refers to it.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicCoref;

fn words_with_offsets(s: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        let word_char = c.is_alphanumeric() || c == '\'' || c == '-';
        match (word_char, start) {
            (true, None) => start = Some(i),
            (false, Some(st)) => {
                out.push((st, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(st) = start {
        out.push((st, s.len()));
    }
    out
}

impl CorefResolver for HeuristicCoref {
    fn clusters(&self, sentences: &[String]) -> Result<Vec<Vec<Mention>>> {
        let Some(first) = sentences.first() else {
            return Ok(Vec::new());
        };
        let words = words_with_offsets(first);
        let lead = words
            .iter()
            .take_while(|(a, b)| first[*a..*b].chars().next().is_some_and(char::is_uppercase))
            .last();
        let Some(&(_, rep_end)) = lead else { return Ok(Vec::new()) };
        let mut cluster = vec![Mention {
            sentence: 0,
            start: words[0].0,
            end: rep_end,
        }];
        for (i, s) in sentences.iter().enumerate() {
            for (a, b) in words_with_offsets(s) {
                if (i, a) <= (0, rep_end) {
                    continue;
                }
                let w = s[a..b].to_lowercase();
                if matches!(
                    w.as_str(),
                    "he" | "she" | "it" | "they" | "him" | "her" | "them" | "his" | "its" | "their"
                ) {
                    cluster.push(Mention {
                        sentence: i,
                        start: a,
                        end: b,
                    });
                }
            }
        }
        Ok(if cluster.len() > 1 { vec![cluster] } else { Vec::new() })
    }
}

/// Sets the omission and hallucination flags and `kept`.
pub fn nli_filter(mut example: CorpusExample, nli: &dyn EntailmentClassifier) -> CorpusExample {
    let check = || -> Result<Flags> {
        let mut omission = false;
        for s in &example.sentences {
            if !entails(nli, &example.paragraph, s)?.is_entailment() {
                omission = true;
                break;
            }
        }
        let joined = example.sentences.join(" ");
        let hallucination = !entails(nli, &joined, &example.paragraph)?.is_entailment();
        Ok(Flags { omission, hallucination })
    };
    match check() {
        Ok(flags) => {
            example.flags = flags;
            example.kept = !flags.omission && !flags.hallucination;
            example.reject_reason = match (flags.omission, flags.hallucination) {
                (false, false) => None,
                (true, false) => Some("omission".into()),
                (false, true) => Some("hallucination".into()),
                (true, true) => Some("omission+hallucination".into()),
            };
        }
        Err(e) => {
            example.kept = false;
            example.reject_reason = Some(format!("nli error: {e}"));
        }
    }
    example
}

/// Rule-based sentence splitter used as the offline split-and-rephrase
/// model. It splits one clause per call and echoes sentences it cannot
/// split.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleSplitter;

struct SplitRules {
    who: Regex,
    born: Regex,
    serving: Regex,
    and: Regex,
}

fn rules() -> &'static SplitRules {
    static RULES: OnceLock<SplitRules> = OnceLock::new();
    RULES.get_or_init(|| SplitRules {
        who: Regex::new(r"^(is|was) (.+?),? who (.+)\.$").unwrap(),
        born: Regex::new(r"^was born in (.+) in (\d{3,4})\.$").unwrap(),
        serving: Regex::new(r"^is (an?|the) (.+?) serving (.+)\.$").unwrap(),
        and: Regex::new(r"^(.+?),? and (is|was|has|had|serves|plays|performs|lives|won|works) (.+)\.$").unwrap(),
    })
}

/// Leading run of capitalised words, e.g. `The Golden Palace`.
fn subject_prefix(sentence: &str) -> Option<(&str, &str)> {
    let words = words_with_offsets(sentence);
    let mut end = None;
    for (a, b) in &words {
        if sentence[*a..*b]
            .chars()
            .next()
            .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
        {
            end = Some(*b);
        } else {
            break;
        }
    }
    let end = end?;
    Some((&sentence[..end], sentence[end..].trim_start()))
}

impl RuleSplitter {
    pub fn split_once(sentence: &str) -> Option<String> {
        let sentence = sentence.trim();
        let (subj, rest) = subject_prefix(sentence)?;
        let r = rules();
        if let Some(c) = r.who.captures(rest) {
            return Some(format!("{subj} {} {}. {subj} {}.", &c[1], &c[2], &c[3]));
        }
        if let Some(c) = r.born.captures(rest) {
            return Some(format!("{subj} was born in {}. {subj} was born in {}.", &c[1], &c[2]));
        }
        if let Some(c) = r.serving.captures(rest) {
            return Some(format!("{subj} is {} {}. {subj} serves {}.", &c[1], &c[2], &c[3]));
        }
        if let Some(c) = r.and.captures(rest) {
            return Some(format!("{subj} {}. {subj} {} {}.", &c[1], &c[2], &c[3]));
        }
        None
    }
}

impl TextGenerator for RuleSplitter {
    fn generate_text(&self, input: &str) -> Result<String> {
        Ok(Self::split_once(input).unwrap_or_else(|| input.to_string()))
    }
}

/// Settings for `build_corpus`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub buckets: LengthBuckets,
    /// Held-out sizes; `None` means one percent of the examples.
    pub dev_size: Option<usize>,
    pub test_size: Option<usize>,
    pub max_depth: usize,
    pub workers: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            buckets: LengthBuckets::default(),
            dev_size: None,
            test_size: None,
            max_depth: 2,
            workers: 1,
        }
    }
}

pub struct CorpusBackends<'a> {
    pub splitter: &'a dyn TextGenerator,
    pub coref: &'a dyn CorefResolver,
    pub nli: &'a dyn EntailmentClassifier,
}

/// Averages in the style of the corpus statistics table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub examples: usize,
    pub tokens_per_source: f64,
    pub tokens_per_target: f64,
    pub sentences_per_source: f64,
    pub sentences_per_target: f64,
}

impl SplitStats {
    pub fn of(examples: &[&CorpusExample]) -> Self {
        let n = examples.len();
        if n == 0 {
            return SplitStats::default();
        }
        let mean = |f: &dyn Fn(&CorpusExample) -> usize| examples.iter().map(|e| f(e)).sum::<usize>() as f64 / n as f64;
        SplitStats {
            examples: n,
            tokens_per_source: mean(&|e| e.sentences.iter().map(|s| tokenize(s).len()).sum()),
            tokens_per_target: mean(&|e| tokenize(&e.paragraph).len()),
            sentences_per_source: mean(&|e| e.sentences.len()),
            sentences_per_target: mean(&|e| split_sentences(&e.paragraph).map(|s| s.len()).unwrap_or(0)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub extraction: ExtractStats,
    pub processed: usize,
    /// Paragraphs dropped by a failing stage, keyed by stage.
    pub skipped: BTreeMap<String, usize>,
    pub full: BTreeMap<String, SplitStats>,
    pub filtered: BTreeMap<String, SplitStats>,
    pub omissions: usize,
    pub hallucinations: usize,
    pub retention: f64,
}

pub struct BuiltCorpus {
    /// Every example by split name, sorted by article id.
    pub splits: BTreeMap<String, Vec<CorpusExample>>,
    pub stats: CorpusStats,
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// Turns one paragraph into an example; errors carry the failing stage.
pub fn process_paragraph(
    para: &RawParagraph,
    cfg: &CorpusConfig,
    backends: &CorpusBackends,
) -> Result<CorpusExample, (String, Error)> {
    let sentences = split_sentences(&para.text).map_err(|e| ("sentence_split".to_string(), e))?;
    let mut rng = substream(cfg.seed, &format!("split-depth/{}", para.article_id));
    let mut synthesized = Vec::new();
    let mut origins = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        let depth = rng.random_range(0..=cfg.max_depth);
        for part in split_and_rephrase(s, backends.splitter, depth) {
            synthesized.push(part);
            origins.push(i);
        }
    }
    let replaced = replace_coreferences(&synthesized, backends.coref).map_err(|e| ("coref".to_string(), e))?;
    let example =
        CorpusExample::from_origins(&para.article_id, &para.text, replaced, origins).map_err(|e| ("assemble".to_string(), e))?;
    Ok(nli_filter(example, backends.nli))
}

/// Runs the whole construction and, when `out_dir` is given, writes
/// `full/{train,dev,test}.jsonl`, `filtered/...` and `stats.json`.
pub fn build_corpus(dump: &Path, cfg: &CorpusConfig, backends: &CorpusBackends, out_dir: Option<&Path>) -> Result<BuiltCorpus> {
    let (mut paragraphs, extraction) = extract_paragraphs(dump, &cfg.buckets)?;
    paragraphs.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| paragraphs.par_iter().map(|p| process_paragraph(p, cfg, backends)).collect());

    let mut stats = CorpusStats {
        extraction,
        processed: paragraphs.len(),
        ..Default::default()
    };
    let mut examples = Vec::new();
    for (p, r) in paragraphs.iter().zip(results) {
        match r {
            Ok(ex) => examples.push(ex),
            Err((stage, e)) => {
                log::warn!("{}: {stage} failed: {e}", p.article_id);
                *stats.skipped.entry(stage).or_default() += 1;
            }
        }
    }

    let n = examples.len();
    let test = cfg.test_size.unwrap_or(n / 100).min(n);
    let dev = cfg.dev_size.unwrap_or(n / 100).min(n - test);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(cfg.seed, "corpus-shuffle"));
    let mut assignment = vec!["train"; n];
    for (rank, &i) in idx.iter().enumerate() {
        if rank < test {
            assignment[i] = "test";
        } else if rank < test + dev {
            assignment[i] = "dev";
        }
    }
    let mut splits: BTreeMap<String, Vec<CorpusExample>> = SPLITS.iter().map(|s| (s.to_string(), Vec::new())).collect();
    for (ex, split) in examples.into_iter().zip(assignment) {
        splits.get_mut(split).unwrap().push(ex);
    }

    let all: Vec<&CorpusExample> = splits.values().flatten().collect();
    stats.omissions = all.iter().filter(|e| e.flags.omission).count();
    stats.hallucinations = all.iter().filter(|e| e.flags.hallucination).count();
    let kept = all.iter().filter(|e| e.kept).count();
    stats.retention = if all.is_empty() { 0.0 } else { kept as f64 / all.len() as f64 };
    for (name, exs) in &splits {
        let full: Vec<&CorpusExample> = exs.iter().collect();
        let filtered: Vec<&CorpusExample> = exs.iter().filter(|e| e.kept).collect();
        stats.full.insert(name.clone(), SplitStats::of(&full));
        stats.filtered.insert(name.clone(), SplitStats::of(&filtered));
    }

    if let Some(dir) = out_dir {
        write_corpus(dir, &splits, &stats)?;
    }
    Ok(BuiltCorpus { splits, stats })
}

fn write_jsonl<'a>(path: &Path, examples: impl Iterator<Item = &'a CorpusExample>) -> Result<()> {
    let mut text = String::new();
    for ex in examples {
        text.push_str(&serde_json::to_string(ex)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_corpus(dir: &Path, splits: &BTreeMap<String, Vec<CorpusExample>>, stats: &CorpusStats) -> Result<()> {
    for variant in ["full", "filtered"] {
        let sub: PathBuf = dir.join(variant);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (name, exs) in splits {
            let keep_all = variant == "full";
            write_jsonl(&sub.join(format!("{name}.jsonl")), exs.iter().filter(|e| keep_all || e.kept))?;
        }
    }
    write_json(&dir.join("stats.json"), stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::LexicalEntailment;

    #[test]
    fn bucket_boundaries() {
        let b = LengthBuckets::default();
        assert_eq!(b.bucket(25), None);
        assert_eq!(b.bucket(30), Some(0));
        assert_eq!(b.bucket(129), Some(0));
        assert_eq!(b.bucket(130), Some(1));
        assert_eq!(b.bucket(330), Some(3));
        assert_eq!(b.bucket(430), Some(3));
        assert_eq!(b.bucket(431), None);
    }

    fn dump(lines: &[String]) -> tempfile::NamedTempFile {
        let f = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        fs::write(f.path(), lines.join("\n")).unwrap();
        f
    }

    fn rec(id: &str, title: &str, text: &str) -> String {
        serde_json::json!({"article_id": id, "title": title, "text": text}).to_string()
    }

    #[test]
    fn extraction_filters() {
        let ok = "Alice Smith is a singer. She was born in Paris in 1970.";
        let mut lines = vec![rec("a", "Alice", "Too short here."), rec("b", "Mercury (disambiguation)", ok)];
        lines.push(rec("c", "List", "* one item here\n* another item in the list"));
        lines.push(rec("d", "Bad", "Alice Smith (born 1970 is a singer from Paris."));
        lines.push(rec("e", "Digits", "1990 2000 2010 2020 3000 4000 5000 6000 99."));
        for i in 0..10 {
            lines.push(rec(&format!("f{i}"), "Alice", ok));
        }
        let f = dump(&lines);
        let (paras, stats) = extract_paragraphs(f.path(), &LengthBuckets::default()).unwrap();
        assert_eq!(paras.len(), 1);
        assert_eq!(paras[0].article_id, "f0");
        assert_eq!(
            (
                stats.out_of_range,
                stats.disambiguation,
                stats.lists,
                stats.malformed,
                stats.duplicates
            ),
            (1, 1, 1, 2, 9)
        );
    }

    #[test]
    fn quota_is_first_come() {
        let lines: Vec<String> = (0..5)
            .map(|i| rec(&format!("p{i}"), "T", &format!("Person number {i} is a singer from Paris.")))
            .collect();
        let f = dump(&lines);
        let (paras, stats) = extract_paragraphs(f.path(), &LengthBuckets::with_quota(2)).unwrap();
        assert_eq!(
            paras.iter().map(|p| p.article_id.as_str()).collect::<Vec<_>>(),
            vec!["p0", "p1"]
        );
        assert_eq!(stats.over_quota, 3);
    }

    #[test]
    fn rule_splitter_one_clause_per_call() {
        let s = "Alice Smith is a singer who performs jazz music and plays the piano.";
        let once = RuleSplitter.generate_text(s).unwrap();
        assert_eq!(
            once,
            "Alice Smith is a singer. Alice Smith performs jazz music and plays the piano."
        );
        assert_eq!(
            RuleSplitter.generate_text("The Mill is a pub serving Thai food.").unwrap(),
            "The Mill is a pub. The Mill serves Thai food."
        );
        assert_eq!(
            RuleSplitter.generate_text("Bo Li was born in Lyon in 1950.").unwrap(),
            "Bo Li was born in Lyon. Bo Li was born in 1950."
        );
        assert_eq!(RuleSplitter.generate_text("It rained.").unwrap(), "It rained.");
    }

    #[test]
    fn depth_semantics() {
        let s = "Alice Smith is a singer who performs jazz music and plays the piano.";
        assert_eq!(split_and_rephrase(s, &RuleSplitter, 0), vec![s]);
        assert_eq!(split_and_rephrase(s, &RuleSplitter, 1).len(), 2);
        assert_eq!(
            split_and_rephrase(s, &RuleSplitter, 2),
            vec![
                "Alice Smith is a singer.",
                "Alice Smith performs jazz music.",
                "Alice Smith plays the piano."
            ]
        );
    }

    struct Echo;
    impl TextGenerator for Echo {
        fn generate_text(&self, input: &str) -> Result<String> {
            Ok(format!("{input} {input}"))
        }
    }

    #[test]
    fn duplicating_model_falls_back() {
        let s = "Bo ran home quickly.";
        assert_eq!(split_and_rephrase(s, &Echo, 2), vec![s]);
    }

    #[test]
    fn coref_replacement() {
        let s = vec!["John ran.".to_string(), "He won.".to_string()];
        assert_eq!(
            replace_coreferences(&s, &HeuristicCoref).unwrap(),
            vec!["John ran.", "John won."]
        );
        let s = vec![
            "Alice Smith sings.".to_string(),
            "Her spouse is Bo.".to_string(),
            "Bo loves her.".to_string(),
        ];
        assert_eq!(
            replace_coreferences(&s, &HeuristicCoref).unwrap(),
            vec!["Alice Smith sings.", "Alice Smith's spouse is Bo.", "Bo loves Alice Smith."]
        );
        let s = vec!["it rained.".to_string(), "Nobody came.".to_string()];
        assert_eq!(replace_coreferences(&s, &HeuristicCoref).unwrap(), s);
    }

    struct PronounFirst;
    impl CorefResolver for PronounFirst {
        fn clusters(&self, _: &[String]) -> Result<Vec<Vec<Mention>>> {
            Ok(vec![vec![
                Mention {
                    sentence: 0,
                    start: 0,
                    end: 2,
                },
                Mention {
                    sentence: 1,
                    start: 0,
                    end: 2,
                },
            ]])
        }
    }

    #[test]
    fn pronoun_representative_is_skipped() {
        let s = vec!["He ran.".to_string(), "He won.".to_string()];
        assert_eq!(replace_coreferences(&s, &PronounFirst).unwrap(), s);
    }

    #[test]
    fn nli_flags() {
        let nli = LexicalEntailment::default();
        let p = "Alice Smith is a singer. She was born in Paris.";
        let ex = CorpusExample::for_test(&["Alice Smith is a singer.", "Alice Smith was born in Paris."], &[1], p);
        let ex = nli_filter(ex, &nli);
        assert!(ex.kept && ex.reject_reason.is_none());
        let ex = CorpusExample::for_test(&["Alice Smith is a singer.", "Alice Smith plays golf in Rome."], &[1], p);
        let ex = nli_filter(ex, &nli);
        assert!(ex.flags.omission && !ex.kept);
        let ex = CorpusExample::for_test(&["Alice Smith is a singer."], &[], p);
        let ex = nli_filter(ex, &nli);
        assert!(ex.flags.hallucination && !ex.flags.omission);
    }

    #[test]
    fn provenance_labels() {
        let ex = CorpusExample::from_origins("a", "P.", vec!["x.".into(), "y.".into(), "z.".into()], vec![0, 0, 1]).unwrap();
        assert_eq!(ex.agg_labels.as_slice(), &[0, 1]);
        ex.validate().unwrap();
        let mut bad = ex.clone();
        bad.agg_labels = Delimiters::new(vec![1, 1]).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_dump_gives_empty_corpus() {
        let f = dump(&[]);
        let out = tempfile::tempdir().unwrap();
        let nli = LexicalEntailment::default();
        let backends = CorpusBackends {
            splitter: &RuleSplitter,
            coref: &HeuristicCoref,
            nli: &nli,
        };
        let built = build_corpus(f.path(), &CorpusConfig::default(), &backends, Some(out.path())).unwrap();
        assert!(built.splits.values().all(Vec::is_empty));
        assert_eq!(fs::read_to_string(out.path().join("full/train.jsonl")).unwrap(), "");
        assert_eq!(built.stats.processed, 0);
    }
}
