//! Paragraph compression: turning plan-decorated facts into a paragraph.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Control, EpochStats, ModelDims, ModelKind, TextGenerator, ToySeq2Seq, TrainConfig, Vocab};
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};
use crate::facts::{Delimiters, Fact};
use crate::rng::substream;
use crate::text::{count_sentences, normalize_whitespace};

pub const SEP_TOKEN: &str = "<sep>";

/// What the compression model sees on its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PcVariant {
    /// Ordered facts with `<sep>` wherever δ = 1.
    #[serde(rename = "PC")]
    Pc,
    /// Ordered facts, no delimiters.
    #[serde(rename = "PC_AGG")]
    PcAgg,
    /// Facts in random order, no delimiters.
    #[serde(rename = "PC_ORD_AGG")]
    PcOrdAgg,
}

impl PcVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PcVariant::Pc => "PC",
            PcVariant::PcAgg => "PC_AGG",
            PcVariant::PcOrdAgg => "PC_ORD_AGG",
        }
    }
}

impl fmt::Display for PcVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PcVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "PC" => Ok(PcVariant::Pc),
            "PC_AGG" => Ok(PcVariant::PcAgg),
            "PC_ORD_AGG" => Ok(PcVariant::PcOrdAgg),
            _ => Err(Error::Config(format!("unknown compression variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcInput {
    pub text: String,
    pub variant: PcVariant,
}

impl PcInput {
    pub fn sep_count(&self) -> usize {
        self.text.split_whitespace().filter(|t| *t == SEP_TOKEN).count()
    }

    /// The fact texts with every `<sep>` removed.
    pub fn without_markers(&self) -> String {
        normalize_whitespace(
            &self
                .text
                .split_whitespace()
                .filter(|t| *t != SEP_TOKEN)
                .collect::<Vec<_>>()
                .join(" "),
        )
    }
}

/// Joins texts with a space, inserting `<sep>` where the delimiter is 1.
pub fn join_with_delimiters<S: AsRef<str>>(texts: &[S], delimiters: Option<&[u8]>) -> String {
    let mut out = String::new();
    for (i, t) in texts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
            if delimiters.is_some_and(|d| d[i - 1] == 1) {
                out.push_str(SEP_TOKEN);
                out.push(' ');
            }
        }
        out.push_str(t.as_ref().trim());
    }
    out
}

pub fn format_pc_input(
    facts: &[Fact],
    delimiters: Option<&Delimiters>,
    variant: PcVariant,
    shuffle_seed: Option<u64>,
) -> Result<PcInput> {
    let mut texts: Vec<&str> = facts.iter().map(|f| f.text.as_str()).collect();
    let delims = match (variant, delimiters) {
        (PcVariant::Pc, Some(d)) => {
            if d.len() + 1 != texts.len().max(1) {
                return Err(Error::Input(format!("{} delimiters for {} facts", d.len(), texts.len())));
            }
            Some(d.as_slice())
        }
        (PcVariant::Pc, None) => return Err(Error::Input("the PC variant needs delimiters".into())),
        (_, Some(_)) => return Err(Error::Input(format!("the {variant} variant takes no delimiters"))),
        (_, None) => None,
    };
    if let (PcVariant::PcOrdAgg, Some(seed)) = (variant, shuffle_seed) {
        texts.shuffle(&mut substream(seed, "pc-input-shuffle"));
    }
    Ok(PcInput {
        text: join_with_delimiters(&texts, delims),
        variant,
    })
}

/// Generates the paragraph; an empty generation is an error.
pub fn compress(input: &PcInput, model: &dyn TextGenerator) -> Result<String> {
    let out = model.generate_text(&input.text)?;
    let out = normalize_whitespace(&out);
    if out.is_empty() {
        return Err(Error::Backend("compression produced an empty paragraph".into()));
    }
    Ok(out)
}

/// Training source for one corpus example under `variant`. PC_ORD_AGG draws
/// a fresh presentation order from `rng`.
pub fn pc_training_source<R: Rng>(example: &CorpusExample, variant: PcVariant, rng: &mut R) -> String {
    match variant {
        PcVariant::Pc => join_with_delimiters(&example.sentences, Some(example.agg_labels.as_slice())),
        PcVariant::PcAgg => join_with_delimiters(&example.sentences, None),
        PcVariant::PcOrdAgg => {
            let mut s: Vec<&String> = example.sentences.iter().collect();
            s.shuffle(rng);
            join_with_delimiters(&s, None)
        }
    }
}

/// Vocabulary covering sources and targets of a corpus.
pub fn pc_vocab(corpus: &[CorpusExample]) -> Vocab {
    Vocab::build(
        corpus
            .iter()
            .flat_map(|c| c.sentences.iter().chain(std::iter::once(&c.paragraph))),
    )
}

/// Trains a compression model for `variant`, ending after `cfg.epochs` or
/// when `monitor` says stop.
pub fn train_pc_with<M>(
    corpus: &[CorpusExample],
    variant: PcVariant,
    cfg: &TrainConfig,
    dims: ModelDims,
    monitor: M,
) -> Result<ToySeq2Seq>
where
    M: FnMut(&EpochStats, &ToySeq2Seq) -> Control,
{
    if corpus.is_empty() {
        return Err(Error::Input("cannot train compression on an empty corpus".into()));
    }
    let mut model = ToySeq2Seq::new(ModelKind::Compression, pc_vocab(corpus), dims, cfg.seed)?;
    model.set_tag(Some(variant.as_str().to_string()));
    model.train(
        cfg,
        corpus.len(),
        cfg.epochs,
        |i, rng| (pc_training_source(&corpus[i], variant, rng), corpus[i].paragraph.clone()),
        monitor,
    )?;
    Ok(model)
}

pub fn train_pc(corpus: &[CorpusExample], variant: PcVariant, cfg: &TrainConfig, dims: ModelDims) -> Result<ToySeq2Seq> {
    train_pc_with(corpus, variant, cfg, dims, |_, _| Control::Continue)
}

/// Variant a compression checkpoint was trained for.
pub fn model_variant(model: &ToySeq2Seq) -> Result<PcVariant> {
    model
        .tag()
        .ok_or_else(|| Error::Config("compression model carries no variant".into()))?
        .parse()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFollowing {
    pub order_ok: bool,
    pub boundary_ok: bool,
}

/// Whether `output` mentions facts in plan order and has one sentence per
/// delimiter group. Anchors default to each fact's object; matching is
/// case-insensitive and a missing anchor counts as an order violation.
pub fn check_plan_following(
    output: &str,
    facts: &[Fact],
    delimiters: &Delimiters,
    anchors: Option<&[String]>,
) -> Result<PlanFollowing> {
    if let Some(a) = anchors {
        if a.len() != facts.len() {
            return Err(Error::Input(format!("{} anchors for {} facts", a.len(), facts.len())));
        }
    }
    let lower = output.to_lowercase();
    let mut last = 0;
    let mut order_ok = true;
    for (i, f) in facts.iter().enumerate() {
        let anchor = anchors.map(|a| a[i].as_str()).unwrap_or_else(|| f.anchor()).to_lowercase();
        match lower.find(&anchor) {
            Some(pos) if pos >= last => last = pos,
            _ => {
                order_ok = false;
                break;
            }
        }
    }
    Ok(PlanFollowing {
        order_ok,
        boundary_ok: count_sentences(output) == 1 + delimiters.breaks(),
    })
}
