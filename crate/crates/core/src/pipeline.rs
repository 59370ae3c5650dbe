//! The 3-, 2- and 1-stage generation systems and batch generation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{predict_delimiters, DelimiterPredictor, ToyAggregator};
use crate::backend::{read_manifest, resolve_model_path, ModelKind, ProcessBackend, TextGenerator, ToySeq2Seq};
use crate::compression::{compress, format_pc_input, model_variant, PcVariant};
use crate::error::{Error, Result};
use crate::facts::{e2e_to_triples, load_templates, realize_all, Delimiters, Fact, TemplateRegistry, Triple};
use crate::ordering::{order_facts, FactOrderer, PointerOrderer};

/// Prefix marking a model spec as an external worker command line.
pub const COMMAND_PREFIX: &str = "cmd:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Realize,
    Ordering,
    Aggregation,
    Compression,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Realize => "realize",
            Stage::Ordering => "ordering",
            Stage::Aggregation => "aggregation",
            Stage::Compression => "compression",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stages {
    #[serde(rename = "THREE", alias = "3")]
    Three,
    #[serde(rename = "TWO", alias = "2")]
    Two,
    #[serde(rename = "ONE", alias = "1")]
    One,
}

impl Stages {
    /// Compression variant each system expects.
    pub fn pc_variant(self) -> PcVariant {
        match self {
            Stages::Three => PcVariant::Pc,
            Stages::Two => PcVariant::PcAgg,
            Stages::One => PcVariant::PcOrdAgg,
        }
    }

    fn orders(self) -> bool {
        self != Stages::One
    }

    fn aggregates(self) -> bool {
        self == Stages::Three
    }
}

impl FromStr for Stages {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "THREE" | "3" => Ok(Stages::Three),
            "TWO" | "2" => Ok(Stages::Two),
            "ONE" | "1" => Ok(Stages::One),
            _ => Err(Error::Config(format!("unknown stage count {s:?}"))),
        }
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stages::Three => "THREE",
            Stages::Two => "TWO",
            Stages::One => "ONE",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusVariant {
    #[default]
    Full,
    Filtered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stages: Stages,
    /// Checkpoint directories, or `cmd:<command line>` for a worker process.
    #[serde(default)]
    pub ord_model: Option<String>,
    #[serde(default)]
    pub agg_model: Option<String>,
    #[serde(default)]
    pub pc_model: Option<String>,
    pub templates: PathBuf,
    #[serde(default = "default_dataset")]
    pub dataset_id: String,
    #[serde(default)]
    pub corpus_variant: CorpusVariant,
    #[serde(default)]
    pub seed: u64,
}

fn default_dataset() -> String {
    "default".into()
}

impl PipelineConfig {
    /// Checks that exactly the models the stage count needs are configured.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, present: bool, needed: bool| match (present, needed) {
            (false, true) => Err(Error::Config(format!("{} needs an {name} model", self.stages))),
            (true, false) => Err(Error::Config(format!("{} takes no {name} model", self.stages))),
            _ => Ok(()),
        };
        check("ordering", self.ord_model.is_some(), self.stages.orders())?;
        check("aggregation", self.agg_model.is_some(), self.stages.aggregates())?;
        check("compression", self.pc_model.is_some(), true)
    }
}

fn model_dir(spec: &str) -> Option<PathBuf> {
    (!spec.starts_with(COMMAND_PREFIX)).then(|| resolve_model_path(Path::new(spec)))
}

fn spawn(spec: &str) -> Result<ProcessBackend> {
    ProcessBackend::from_command_line(&spec[COMMAND_PREFIX.len()..])
}

fn check_kind(dir: &Path, kind: ModelKind) -> Result<()> {
    let m = read_manifest(dir)?;
    if m.kind != kind {
        return Err(Error::Config(format!(
            "{} holds a {} model, expected {kind}",
            dir.display(),
            m.kind
        )));
    }
    Ok(())
}

/// A loaded generation system; models are shared read-only.
pub struct Pipeline {
    pub stages: Stages,
    pub registry: TemplateRegistry,
    orderer: Option<Box<dyn FactOrderer>>,
    aggregator: Option<Box<dyn DelimiterPredictor>>,
    compressor: Box<dyn TextGenerator>,
}

impl Pipeline {
    /// Validates the whole configuration, including checkpoint kinds and
    /// the compression variant, before loading any weights.
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let registry = load_templates(&config.templates, &config.dataset_id)?;
        let dirs = |s: &Option<String>| s.as_deref().and_then(model_dir);
        if let Some(d) = dirs(&config.ord_model) {
            check_kind(&d, ModelKind::Ordering)?;
        }
        if let Some(d) = dirs(&config.agg_model) {
            check_kind(&d, ModelKind::Aggregation)?;
        }
        if let Some(d) = dirs(&config.pc_model) {
            check_kind(&d, ModelKind::Compression)?;
            let want = config.stages.pc_variant();
            let got = read_manifest(&d)?.pc_variant.unwrap_or_default();
            if got != want.as_str() {
                return Err(Error::Config(format!(
                    "{} needs a {want} compression model but {} was trained as {got:?}",
                    config.stages,
                    d.display()
                )));
            }
        }

        let orderer: Option<Box<dyn FactOrderer>> = match config.ord_model.as_deref() {
            None => None,
            Some(s) => Some(match model_dir(s) {
                Some(d) => Box::new(PointerOrderer::load(&d)?),
                None => Box::new(spawn(s)?),
            }),
        };
        let aggregator: Option<Box<dyn DelimiterPredictor>> = match config.agg_model.as_deref() {
            None => None,
            Some(s) => Some(match model_dir(s) {
                Some(d) => Box::new(ToyAggregator::load(&d)?),
                None => Box::new(spawn(s)?),
            }),
        };
        let pc = config.pc_model.as_deref().expect("validated");
        let compressor: Box<dyn TextGenerator> = match model_dir(pc) {
            Some(d) => {
                let m = ToySeq2Seq::load(&d, ModelKind::Compression)?;
                debug_assert_eq!(model_variant(&m)?, config.stages.pc_variant());
                Box::new(m)
            }
            None => Box::new(spawn(pc)?),
        };
        Self::from_parts(config.stages, registry, orderer, aggregator, compressor)
    }

    pub fn from_parts(
        stages: Stages,
        registry: TemplateRegistry,
        orderer: Option<Box<dyn FactOrderer>>,
        aggregator: Option<Box<dyn DelimiterPredictor>>,
        compressor: Box<dyn TextGenerator>,
    ) -> Result<Self> {
        if orderer.is_some() != stages.orders() || aggregator.is_some() != stages.aggregates() {
            return Err(Error::Config(format!("models do not match a {stages} pipeline")));
        }
        Ok(Pipeline {
            stages,
            registry,
            orderer,
            aggregator,
            compressor,
        })
    }

    /// Runs every configured stage on one triple set.
    pub fn run(&self, id: &str, triples: &[Triple]) -> Result<GenerationRecord> {
        if triples.is_empty() {
            return Err(Error::Input("empty triple set".into()).at_stage(Stage::Realize));
        }
        let facts = realize_all(triples, &self.registry).map_err(|e| e.at_stage(Stage::Realize))?;
        let order = match &self.orderer {
            Some(o) => Some(order_facts(&facts, o.as_ref()).map_err(|e| e.at_stage(Stage::Ordering))?),
            None => None,
        };
        let ordered: Vec<Fact> = match &order {
            Some(o) => o.iter().map(|&i| facts[i].clone()).collect(),
            None => facts.clone(),
        };
        let delimiters = match &self.aggregator {
            Some(a) => Some(predict_delimiters(&ordered, a.as_ref()).map_err(|e| e.at_stage(Stage::Aggregation))?),
            None => None,
        };
        let pc_input = format_pc_input(&ordered, delimiters.as_ref(), self.stages.pc_variant(), None)
            .map_err(|e| e.at_stage(Stage::Compression))?;
        let output = compress(&pc_input, self.compressor.as_ref()).map_err(|e| e.at_stage(Stage::Compression))?;
        Ok(GenerationRecord {
            id: id.to_string(),
            stages: self.stages,
            triples: triples.to_vec(),
            facts,
            plan: PlanRecord { order, delimiters },
            pc_input: pc_input.text,
            output,
        })
    }
}

/// Whatever part of the content plan the system produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiters: Option<Delimiters>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub stages: Stages,
    pub triples: Vec<Triple>,
    pub facts: Vec<Fact>,
    pub plan: PlanRecord,
    pub pc_input: String,
    pub output: String,
}

pub fn run_pipeline(triples: &[Triple], config: &PipelineConfig) -> Result<GenerationRecord> {
    Pipeline::load(config)?.run("0", triples)
}

/// Realized facts joined by single spaces, in input order.
pub fn copy_baseline(triples: &[Triple], registry: &TemplateRegistry) -> Result<String> {
    let facts = realize_all(triples, registry)?;
    Ok(facts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join(" "))
}

/// One dataset line: `{id, triples}` or `{id, name?, attributes: [[k, v], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triples: Option<Vec<Triple>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl DatasetRecord {
    pub fn triples(&self) -> Result<Vec<Triple>> {
        match (&self.triples, &self.attributes) {
            (Some(t), None) => Ok(t.clone()),
            (None, Some(a)) => e2e_to_triples(self.name.as_deref(), a),
            _ => Err(Error::Input(format!(
                "record {:?} needs exactly one of triples or attributes",
                self.id
            ))),
        }
    }
}

/// Input lines and their parse failures, in file order.
pub fn read_dataset(path: &Path) -> Result<Vec<Result<DatasetRecord>>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchLine {
    Ok(GenerationRecord),
    Err(ErrorRecord),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub records: usize,
    pub succeeded: usize,
    pub errors_by_stage: BTreeMap<String, usize>,
}

fn error_line(id: String, e: Error) -> BatchLine {
    let stage = match &e {
        Error::Stage { stage, .. } => stage.to_string(),
        _ => "input".to_string(),
    };
    BatchLine::Err(ErrorRecord {
        id,
        stage,
        error: e.to_string(),
    })
}

/// Generates one line per dataset record, in input order, in parallel
/// across records. Failed records become error lines.
pub fn batch_generate(dataset: &Path, pipeline: &Pipeline, out: &Path, workers: usize) -> Result<BatchSummary> {
    let records = read_dataset(dataset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let lines: Vec<BatchLine> = pool.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| match r {
                Err(e) => error_line(format!("line-{}", i + 1), Error::Input(e.to_string())),
                Ok(rec) => match rec.triples().and_then(|t| pipeline.run(&rec.id, &t)) {
                    Ok(g) => BatchLine::Ok(g),
                    Err(e) => error_line(rec.id.clone(), e),
                },
            })
            .collect()
    });
    let mut summary = BatchSummary {
        records: lines.len(),
        ..Default::default()
    };
    let mut text = String::new();
    for line in &lines {
        match line {
            BatchLine::Ok(_) => summary.succeeded += 1,
            BatchLine::Err(e) => *summary.errors_by_stage.entry(e.stage.clone()).or_default() += 1,
        }
        text.push_str(&serde_json::to_string(line)?);
        text.push('\n');
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(summary)
}
