//! Enumerated-item extraction and Jaccard overlap.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::entity::{match_pair, normalize_entity, AbbreviationTable};
use crate::error::Result;
use crate::factual::split_sentences;
use crate::scalar::Scalar;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ItemOrigin {
    Bullet,
    Numbered,
    CommaSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnumerationConfig {
    /// Minimum number of items for an in-sentence comma series.
    pub min_series_items: usize,
    /// Longest middle item (in words) still treated as a list item.
    pub max_item_words: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self {
            min_series_items: 3,
            max_item_words: 5,
        }
    }
}

/// Normalized enumerated items, each tagged with where it was first seen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationSet {
    items: BTreeMap<String, ItemOrigin>,
}

impl EnumerationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from raw items (all tagged as bullets); for tests and fixtures.
    pub fn from_items<I, S>(items: I, table: &AbbreviationTable) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for i in items {
            set.insert(i.as_ref(), ItemOrigin::Bullet, table);
        }
        set
    }

    pub fn insert(&mut self, raw: &str, origin: ItemOrigin, table: &AbbreviationTable) -> bool {
        match normalize_entity(raw, table) {
            Ok(n) => {
                self.items.entry(n).or_insert(origin);
                true
            }
            Err(_) => false,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }

    pub fn origin(&self, item: &str) -> Option<ItemOrigin> {
        self.items.get(item).copied()
    }
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[-*\u{2022}]\s+(.+?)\s*$").expect("valid regex"))
}

fn numbered_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+[.)]\s+(.+?)\s*$").expect("valid regex"))
}

/// Words that introduce a list inside a sentence; the first series item starts after
/// the last of them.
const LIST_CUES: &[&str] = &[
    "include", "includes", "including", "included", "are", "is", "like", "as", "such", "e.g",
    "eg", "involve", "involves", "cause", "causes",
];

const CONJUNCTIONS: &[&str] = &["and", "or", "and/or"];

fn word_list(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn strip_conjunction(s: &str) -> &str {
    let t = s.trim();
    for c in CONJUNCTIONS {
        if let Some(rest) = t.strip_prefix(c) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    t
}

/// Splits a sentence into comma-series items, if it contains one.
fn comma_series(sentence: &str, cfg: &EnumerationConfig) -> Option<Vec<String>> {
    let body = sentence.trim().trim_end_matches(['.', '!', '?', ';', ':']);
    let mut segments: Vec<String> = body.split(',').map(|s| s.trim().to_string()).collect();
    if segments.len() < 2 {
        return None;
    }
    // "a, b and c": split the final conjunction out of the last segment
    let last = segments.pop().expect("at least two segments");
    let last_words = word_list(&last);
    if let Some(pos) = last_words
        .iter()
        .position(|w| CONJUNCTIONS.contains(&w.to_lowercase().as_str()))
        .filter(|&p| p > 0)
    {
        segments.push(last_words[..pos].join(" "));
        segments.push(last_words[pos..].join(" "));
    } else {
        segments.push(last);
    }
    let n = segments.len();
    if n < cfg.min_series_items.max(2) {
        return None;
    }
    let last_seg = segments[n - 1].clone();
    if strip_conjunction(&last_seg).len() == last_seg.trim().len() {
        // a series ends with a conjunction
        return None;
    }
    let middle = &segments[1..n - 1];
    if middle
        .iter()
        .any(|m| m.is_empty() || word_list(m).len() > cfg.max_item_words)
    {
        return None;
    }
    let width = middle.iter().map(|m| word_list(m).len()).max().unwrap_or(1).max(1);

    let first_words = word_list(&segments[0]);
    let cue = first_words
        .iter()
        .rposition(|w| LIST_CUES.contains(&w.to_lowercase().trim_end_matches(':')) || w.ends_with(':'));
    let first: Vec<&str> = match cue {
        Some(p) if p + 1 < first_words.len() => first_words[p + 1..].to_vec(),
        _ if first_words.len() <= width + 2 => first_words.clone(),
        _ => first_words[first_words.len() - width..].to_vec(),
    };
    let tail_words = word_list(strip_conjunction(&last_seg));
    let tail: Vec<&str> = if tail_words.len() <= width + 2 {
        tail_words
    } else {
        tail_words[..width].to_vec()
    };

    let mut items = vec![first.join(" ")];
    items.extend(middle.iter().cloned());
    items.push(tail.join(" "));
    if items.iter().any(|i| i.trim().is_empty()) {
        return None;
    }
    Some(items)
}

/// Extracts bullet items, numbered items and in-sentence comma series.
pub fn extract_enumerations(source: &str, table: &AbbreviationTable) -> EnumerationSet {
    extract_enumerations_with(source, table, &EnumerationConfig::default())
}

pub fn extract_enumerations_with(
    source: &str,
    table: &AbbreviationTable,
    cfg: &EnumerationConfig,
) -> EnumerationSet {
    let mut set = EnumerationSet::new();
    let mut prose = String::new();
    for line in source.lines() {
        if let Some(c) = bullet_re().captures(line) {
            set.insert(&c[1], ItemOrigin::Bullet, table);
        } else if let Some(c) = numbered_re().captures(line) {
            set.insert(&c[1], ItemOrigin::Numbered, table);
        } else {
            prose.push_str(line);
            prose.push('\n');
        }
    }
    for sentence in split_sentences(&prose) {
        for clause in sentence.split(';') {
            if let Some(items) = comma_series(clause, cfg) {
                for item in items {
                    set.insert(&item, ItemOrigin::CommaSeries, table);
                }
            }
        }
    }
    set
}

/// Jaccard similarity with matcher-based intersection.
///
/// The intersection size is the smaller of the number of reference items matched by
/// some generated item and the number of generated items matched by some reference
/// item; under one-to-one matches both counts agree. The union is
/// `|A| + |B| - |A ∩ B|`. Two empty sets score 0.
pub fn structured_overlap<T: Scalar>(
    reference: &EnumerationSet,
    generated: &EnumerationSet,
    min_token_len: usize,
) -> T {
    if reference.is_empty() || generated.is_empty() {
        return T::zero();
    }
    let mut ref_hit = vec![false; reference.len()];
    let mut gen_hit = vec![false; generated.len()];
    for (i, r) in reference.items().enumerate() {
        for (j, g) in generated.items().enumerate() {
            if match_pair(r, g, std::iter::empty(), std::iter::empty(), min_token_len).is_some() {
                ref_hit[i] = true;
                gen_hit[j] = true;
            }
        }
    }
    let inter = ref_hit
        .iter()
        .filter(|h| **h)
        .count()
        .min(gen_hit.iter().filter(|h| **h).count());
    let union = reference.len() + generated.len() - inter;
    T::from_usize_lossy(inter) / T::from_usize_lossy(union)
}

/// Convenience: extract from both texts and score.
pub fn structured_overlap_texts<T: Scalar>(
    reference: &str,
    generated: &str,
    table: &AbbreviationTable,
    cfg: &EnumerationConfig,
    min_token_len: usize,
) -> Result<T> {
    let a = extract_enumerations_with(reference, table, cfg);
    let b = extract_enumerations_with(generated, table, cfg);
    Ok(structured_overlap(&a, &b, min_token_len))
}

/// Number of words in the longest item; used by reports.
pub fn longest_item_words(set: &EnumerationSet) -> usize {
    set.items().map(|i| text::words(i).len()).max().unwrap_or(0)
}
