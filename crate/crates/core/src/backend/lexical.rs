//! Word-overlap entailment heuristic for offline runs.
//!
//! It is not a trained NLI model. Entailment is predicted when nearly all
//! content words of the hypothesis occur in the premise, contradiction
//! when exactly one side is negated.

use std::collections::HashSet;

use super::EntailmentClassifier;
use crate::error::Result;
use crate::text::tokenize;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "of", "in", "on", "at", "to", "and", "or", "by", "for", "with",
    "as", "it", "its", "he", "she", "his", "her", "they", "their", "them", "him", "who", "which", "that", "this", "there",
    "also", "has", "have", "had", "from",
];

const NEGATIONS: &[&str] = &["not", "no", "never", "n't", "cannot", "nobody", "nothing"];

/// Coverage-based stand-in for an NLI classifier.
#[derive(Clone, Copy, Debug)]
pub struct LexicalEntailment {
    /// Coverage at which entailment and neutral tie.
    pub threshold: f64,
    /// Logit slope around the threshold.
    pub sharpness: f64,
}

impl Default for LexicalEntailment {
    fn default() -> Self {
        LexicalEntailment {
            threshold: 0.9,
            sharpness: 20.0,
        }
    }
}

fn normalize(token: &str) -> Option<String> {
    let t = token.to_lowercase();
    let t = t.strip_suffix("'s").unwrap_or(&t).to_string();
    if t.chars().all(|c| !c.is_alphanumeric()) {
        return None;
    }
    Some(t)
}

fn content_words(text: &str) -> (Vec<String>, bool) {
    let mut words = Vec::new();
    let mut negated = false;
    for tok in tokenize(text) {
        let Some(t) = normalize(&tok) else { continue };
        if NEGATIONS.contains(&t.as_str()) || t.ends_with("n't") {
            negated = true;
        } else if !STOPWORDS.contains(&t.as_str()) {
            words.push(t);
        }
    }
    (words, negated)
}

impl LexicalEntailment {
    /// Share of hypothesis content words found in the premise.
    pub fn coverage(premise: &str, hypothesis: &str) -> f64 {
        let (p, _) = content_words(premise);
        let (h, _) = content_words(hypothesis);
        if h.is_empty() {
            return 1.0;
        }
        let p: HashSet<&String> = p.iter().collect();
        h.iter().filter(|w| p.contains(w)).count() as f64 / h.len() as f64
    }
}

impl EntailmentClassifier for LexicalEntailment {
    fn probabilities(&self, premise: &str, hypothesis: &str) -> Result<[f64; 3]> {
        let cov = Self::coverage(premise, hypothesis);
        let (_, neg_p) = content_words(premise);
        let (_, neg_h) = content_words(hypothesis);
        let logits = [
            self.sharpness * (cov - self.threshold),
            0.0,
            if neg_p != neg_h { 3.0 } else { -2.0 },
        ];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp = logits.map(|l| (l - max).exp());
        let z: f64 = exp.iter().sum();
        Ok(exp.map(|e| e / z))
    }
}
