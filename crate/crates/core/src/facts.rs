//! Triples, templates, facts and content plans, plus triple-to-fact
//! realization.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{has_single_terminal, normalize_whitespace};

const SUBJECT_SLOT: &str = "<s>";
const OBJECT_SLOT: &str = "<o>";

/// A (subject, predicate, object) input item.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: impl Into<String>) -> Result<Self> {
        let t = Triple {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("subject", &self.subject),
            ("predicate", &self.predicate),
            ("object", &self.object),
        ] {
            if value.trim().is_empty() {
                return Err(Error::InvalidTriple(format!("{field} is empty")));
            }
        }
        for (field, value) in [("subject", &self.subject), ("object", &self.object)] {
            if value.contains(SUBJECT_SLOT) || value.contains(OBJECT_SLOT) {
                return Err(Error::InvalidTriple(format!(
                    "{field} {value:?} contains a template placeholder"
                )));
            }
        }
        Ok(())
    }
}

/// Canonical predicate key: trimmed, internal whitespace collapsed,
/// otherwise verbatim (case, underscores and camelCase are preserved).
pub fn normalize_predicate(predicate: &str) -> String {
    normalize_whitespace(predicate)
}

/// Single-sentence pattern for one predicate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub predicate: String,
    pub pattern: String,
}

impl Template {
    pub fn new(predicate: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        let t = Template {
            predicate: normalize_predicate(&predicate.into()),
            pattern: pattern.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidTemplate {
            predicate: self.predicate.clone(),
            reason: reason.to_string(),
        };
        if self.predicate.is_empty() {
            return Err(invalid("empty predicate"));
        }
        if self.pattern.matches(SUBJECT_SLOT).count() != 1 {
            return Err(invalid("pattern must contain <s> exactly once"));
        }
        if self.pattern.matches(OBJECT_SLOT).count() > 1 {
            return Err(invalid("pattern may contain <o> at most once"));
        }
        if !has_single_terminal(&self.pattern) {
            return Err(invalid("pattern must end with sentence-final punctuation"));
        }
        Ok(())
    }

    /// Fills the placeholders verbatim.
    pub fn fill(&self, subject: &str, object: &str) -> String {
        self.pattern
            .replacen(SUBJECT_SLOT, subject, 1)
            .replacen(OBJECT_SLOT, object, 1)
    }
}

#[derive(Deserialize)]
struct TemplateRecord {
    predicate: String,
    pattern: String,
}

/// Predicate → template map for one dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TemplateRegistry {
    pub dataset_id: String,
    entries: BTreeMap<String, Template>,
}

impl TemplateRegistry {
    pub fn new(dataset_id: impl Into<String>) -> Self {
        TemplateRegistry {
            dataset_id: dataset_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn from_templates(dataset_id: impl Into<String>, templates: impl IntoIterator<Item = Template>) -> Result<Self> {
        let mut reg = Self::new(dataset_id);
        for t in templates {
            reg.insert(t)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, template: Template) -> Result<()> {
        template.validate()?;
        let key = normalize_predicate(&template.predicate);
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicatePredicate(key));
        }
        self.entries.insert(key, template);
        Ok(())
    }

    pub fn get(&self, predicate: &str) -> Option<&Template> {
        self.entries.get(&normalize_predicate(predicate))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.entries.values()
    }

    /// One JSON object per line with keys `predicate` and `pattern`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in self.entries.values() {
            out.push_str(&serde_json::to_string(t).expect("templates serialise"));
            out.push('\n');
        }
        out
    }
}

/// Reads a JSONL template file. Blank lines are skipped.
pub fn load_templates(path: impl AsRef<Path>, dataset_id: &str) -> Result<TemplateRegistry> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_templates(&raw, path, dataset_id)
}

pub(crate) fn parse_templates(raw: &str, path: &Path, dataset_id: &str) -> Result<TemplateRegistry> {
    let mut reg = TemplateRegistry::new(dataset_id);
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: TemplateRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let template = Template::new(rec.predicate, rec.pattern).map_err(|e| match e {
            Error::InvalidTemplate { .. } => parse_err(e.to_string()),
            other => other,
        })?;
        reg.insert(template)?;
    }
    Ok(reg)
}

/// One sentence realizing one triple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub text: String,
    pub source: Triple,
}

impl Fact {
    /// Wraps a free-standing sentence (no source triple) so it can flow
    /// through the ordering and aggregation interfaces; the sentence is its
    /// own anchor.
    pub fn sentence(text: impl Into<String>) -> Self {
        let text = text.into();
        Fact {
            source: Triple {
                subject: String::new(),
                predicate: "sentence".into(),
                object: text.clone(),
            },
            text,
        }
    }

    /// Default anchor for plan-following checks: the object string.
    pub fn anchor(&self) -> &str {
        &self.source.object
    }
}

pub fn realize_fact(triple: &Triple, registry: &TemplateRegistry) -> Result<Fact> {
    triple.validate()?;
    let template = registry.get(&triple.predicate).ok_or_else(|| Error::MissingTemplate {
        predicate: triple.predicate.clone(),
        index: None,
    })?;
    let text = template.fill(&triple.subject, &triple.object);
    if !has_single_terminal(&text) {
        return Err(Error::InvalidTriple(format!(
            "realized fact {text:?} is not a single sentence"
        )));
    }
    Ok(Fact {
        text,
        source: triple.clone(),
    })
}

/// Realizes every triple in order; fails on the first missing template.
pub fn realize_all(triples: &[Triple], registry: &TemplateRegistry) -> Result<Vec<Fact>> {
    triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            realize_fact(t, registry).map_err(|e| match e {
                Error::MissingTemplate { predicate, .. } => Error::MissingTemplate {
                    predicate,
                    index: Some(i),
                },
                other => other,
            })
        })
        .collect()
}

/// Turns an attribute-value record into triples with the `name` value as
/// subject. `attributes` may or may not contain `name`; `name` is used
/// when given explicitly, otherwise taken from the attributes.
pub fn e2e_to_triples(name: Option<&str>, attributes: &[(String, String)]) -> Result<Vec<Triple>> {
    let from_attrs = attributes.iter().find(|(k, _)| k == "name").map(|(_, v)| v.as_str());
    let subject = name
        .or(from_attrs)
        .filter(|n| !n.trim().is_empty())
        .ok_or_else(|| Error::Input("attribute-value record has no name".into()))?;
    attributes
        .iter()
        .filter(|(k, _)| k != "name")
        .map(|(k, v)| Triple::new(subject, k.as_str(), v.as_str()))
        .collect()
}

/// Binary boundary decisions between adjacent ordered facts:
/// `0` fuses the neighbours, `1` keeps them in separate sentences.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct Delimiters(Vec<u8>);

impl Delimiters {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| **v > 1) {
            return Err(Error::Input(format!("delimiter value {v} is not 0 or 1")));
        }
        Ok(Delimiters(values))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Σδ, the number of sentence breaks.
    pub fn breaks(&self) -> usize {
        self.0.iter().map(|&v| v as usize).sum()
    }
}

impl TryFrom<Vec<u8>> for Delimiters {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Delimiters::new(v)
    }
}

impl From<Delimiters> for Vec<u8> {
    fn from(d: Delimiters) -> Self {
        d.0
    }
}

/// A fact permutation plus the delimiters between consecutive ordered facts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentPlan {
    pub order: Vec<usize>,
    pub delimiters: Delimiters,
}

/// O(n) check that `order` is a bijection on `0..order.len()`.
pub fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    for &i in order {
        if i >= order.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

impl ContentPlan {
    pub fn new(order: Vec<usize>, delimiters: Delimiters) -> Result<Self> {
        let plan = ContentPlan { order, delimiters };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_permutation(&self.order) {
            return Err(Error::Contract(format!("{:?} is not a permutation", self.order)));
        }
        if self.delimiters.len() + 1 != self.order.len().max(1) {
            return Err(Error::Contract(format!(
                "{} facts need {} delimiters, got {}",
                self.order.len(),
                self.order.len().saturating_sub(1),
                self.delimiters.len()
            )));
        }
        Ok(())
    }
}
