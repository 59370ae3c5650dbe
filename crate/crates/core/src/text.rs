//! Word tokenisation, detokenisation and sentence segmentation.
//!
//! This is the single segmentation authority of the crate: the corpus
//! builder, the plan-following check, corpus statistics and the metrics all
//! count sentences and tokens through these functions.

use crate::error::{Error, Result};

/// Marker tokens that are never split.
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<sep>"];

const OPENERS: [char; 2] = ['(', '['];
const CLOSERS: [char; 8] = ['.', ',', ';', ':', '!', '?', ')', ']'];

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "inc", "ltd", "co", "corp", "no", "mt", "ft",
    "gen", "col", "lt", "sgt", "capt", "rev", "hon", "approx", "ca", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
    "sept", "oct", "nov", "dec", "fig", "vol", "op", "ed", "est",
];

/// Collapses runs of whitespace to one space and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits text into word and punctuation tokens.
///
/// Opening brackets are peeled off the front of a word and closing
/// punctuation off its end; everything else (including internal periods as
/// in `973.0` and apostrophes as in `Perón's`) stays inside the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if SPECIAL_TOKENS.contains(&chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            if OPENERS.contains(&c) && rest.len() > c.len_utf8() {
                out.push(c.to_string());
                rest = &rest[c.len_utf8()..];
            } else {
                break;
            }
        }
        let mut tail = Vec::new();
        while let Some(c) = rest.chars().next_back() {
            if CLOSERS.contains(&c) {
                tail.push(c.to_string());
                rest = &rest[..rest.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(tail.into_iter().rev());
    }
    out
}

/// Inverse of [`tokenize`] for ordinarily spaced text.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for tok in tokens {
        let tok = tok.as_ref();
        let is_closer = tok.chars().count() == 1 && tok.chars().all(|c| CLOSERS.contains(&c));
        if !glue_next && !is_closer {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = tok.chars().count() == 1 && tok.chars().all(|c| OPENERS.contains(&c));
    }
    out
}

fn is_abbreviation(word: &str) -> bool {
    let core = word.trim_start_matches(|c: char| OPENERS.contains(&c) || c == '"' || c == '\'');
    let core = core.strip_suffix('.').unwrap_or(core);
    if core.is_empty() {
        return false;
    }
    let mut chars = core.chars();
    let first = chars.next().unwrap();
    if chars.next().is_none() && first.is_alphabetic() {
        // initials such as "A." or "J."
        return true;
    }
    if core.contains('.') && core.chars().all(|c| c.is_alphabetic() || c == '.') {
        // dotted abbreviations such as "U.S" (trailing dot already removed)
        return true;
    }
    ABBREVIATIONS.contains(&core.to_lowercase().as_str())
}

/// Splits a paragraph into sentences.
///
/// A boundary is a `.`, `!` or `?` (plus any closing quotes or brackets)
/// followed by whitespace and then an uppercase letter, digit, quote or
/// opening bracket. Periods that end an initial or a known abbreviation do
/// not end a sentence.
pub fn split_sentences(paragraph: &str) -> Result<Vec<String>> {
    let text = paragraph.trim();
    if text.is_empty() {
        return Err(Error::Input("cannot split an empty paragraph".into()));
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | ']' | '”' | '’') {
                j += 1;
            }
            let end = if j < chars.len() { chars[j].0 } else { text.len() };
            let mut k = j;
            let mut saw_space = false;
            while k < chars.len() && chars[k].1.is_whitespace() {
                saw_space = true;
                k += 1;
            }
            let next_starts = k < chars.len() && {
                let n = chars[k].1;
                n.is_uppercase() || n.is_ascii_digit() || matches!(n, '"' | '\'' | '(' | '[' | '“' | '‘')
            };
            if saw_space && next_starts {
                let word_start = text[..pos].rfind(char::is_whitespace).map(|p| p + 1).unwrap_or(0);
                let word = &text[word_start..=pos];
                if c != '.' || !is_abbreviation(word) {
                    sentences.push(text[start..end].trim().to_string());
                    start = chars[k].0;
                    i = k;
                    continue;
                }
            }
        }
        i += 1;
    }
    let last = text[start..].trim();
    if !last.is_empty() {
        sentences.push(last.to_string());
    }
    Ok(sentences)
}

/// Number of sentences in `text`; zero for blank text.
pub fn count_sentences(text: &str) -> usize {
    split_sentences(text).map(|s| s.len()).unwrap_or(0)
}

/// Ends with exactly one of `.`, `!` or `?`.
pub fn has_single_terminal(text: &str) -> bool {
    let mut rev = text.trim_end().chars().rev();
    match (rev.next(), rev.next()) {
        (Some(a), Some(b)) => matches!(a, '.' | '!' | '?') && !matches!(b, '.' | '!' | '?'),
        (Some(a), None) => matches!(a, '.' | '!' | '?'),
        _ => false,
    }
}
