//! NLI-based factual consistency.
//!
//! The reference answer is the premise and each generated sentence a hypothesis. Each
//! sentence takes the score its argmax label maps to, and the answer scores the mean.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::HttpClient;
use crate::scalar::Scalar;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

/// Label distribution for one premise/hypothesis pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict<T> {
    pub entailment: T,
    pub neutral: T,
    pub contradiction: T,
}

impl<T: Scalar> NliVerdict<T> {
    pub fn new(entailment: T, neutral: T, contradiction: T) -> Result<Self> {
        let v = Self {
            entailment,
            neutral,
            contradiction,
        };
        let probs = [entailment, neutral, contradiction];
        if probs.iter().any(|p| !(*p >= T::zero() && *p <= T::one())) {
            return Err(Error::Validation(format!("NLI probabilities {probs:?} outside [0, 1]")));
        }
        let sum: T = probs.into_iter().sum();
        if (sum - T::one()).abs() > T::lit(1e-6).max(T::epsilon() * T::lit(8.0)) {
            return Err(Error::Validation(format!("NLI probabilities sum to {sum}")));
        }
        Ok(v)
    }

    /// Most probable label; exact ties resolve in the order entailment, neutral,
    /// contradiction.
    pub fn argmax(&self) -> NliLabel {
        if self.entailment >= self.neutral && self.entailment >= self.contradiction {
            NliLabel::Entailment
        } else if self.neutral >= self.contradiction {
            NliLabel::Neutral
        } else {
            NliLabel::Contradiction
        }
    }
}

/// Score assigned to each argmax label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelMapping<T> {
    pub entailment: T,
    pub neutral: T,
    pub contradiction: T,
}

impl<T: Scalar> Default for LabelMapping<T> {
    fn default() -> Self {
        Self {
            entailment: T::one(),
            neutral: T::lit(0.5),
            contradiction: T::zero(),
        }
    }
}

impl<T: Scalar> LabelMapping<T> {
    pub fn score(&self, label: NliLabel) -> T {
        match label {
            NliLabel::Entailment => self.entailment,
            NliLabel::Neutral => self.neutral,
            NliLabel::Contradiction => self.contradiction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.entailment, self.neutral, self.contradiction] {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::Config(format!("label score {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// Classify each generated sentence separately and average.
    #[default]
    PerSentence,
    /// Classify the whole generated answer as one hypothesis.
    WholeResponse,
}

pub trait NliBackend<T: Scalar = f64>: Send + Sync {
    fn name(&self) -> &str;
    /// Classifies `(premise, hypothesis)` pairs, aligned by index.
    fn classify_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliVerdict<T>>>;
}

pub fn nli_classify<T: Scalar>(
    premise: &str,
    hypothesis: &str,
    backend: &dyn NliBackend<T>,
) -> Result<NliVerdict<T>> {
    if premise.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(Error::Validation("NLI needs a nonempty premise and hypothesis".into()));
    }
    let mut out = backend.classify_batch(&[(premise, hypothesis)])?;
    match out.len() {
        1 => Ok(out.remove(0)),
        n => Err(Error::BackendProtocol {
            backend: backend.name().to_string(),
            reason: format!("expected 1 verdict, got {n}"),
        }),
    }
}

/// Lowercased words that end a sentence-final period without ending the sentence.
pub const ABBREVIATION_GUARD: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "mg.", "approx.",
    "no.", "fig.", "inc.", "jr.", "sr.",
];

/// Splits on `.`, `!` or `?` followed by whitespace and an uppercase letter or digit,
/// unless the word ending at the punctuation is in [`ABBREVIATION_GUARD`].
pub fn split_sentences(source: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = source.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            // skip whitespace after the punctuation
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            let boundary = j > i + 1
                && j < chars.len()
                && (chars[j].1.is_uppercase() || chars[j].1.is_ascii_digit());
            if boundary && !(c == '.' && ends_with_guard(&source[start..pos + 1])) {
                let s = source[start..pos + 1].trim();
                if !s.is_empty() {
                    sentences.push(s.to_string());
                }
                start = chars[j].0;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let tail = source[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

fn ends_with_guard(prefix: &str) -> bool {
    let last = prefix
        .split_whitespace()
        .last()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    ABBREVIATION_GUARD.contains(&last.as_str())
}

/// Factual consistency of `generated` against `reference`, in `[0, 1]`.
pub fn factual_consistency<T: Scalar>(
    reference: &str,
    generated: &str,
    backend: &dyn NliBackend<T>,
    mapping: &LabelMapping<T>,
    mode: ConsistencyMode,
) -> Result<T> {
    let hypotheses = match mode {
        ConsistencyMode::PerSentence => split_sentences(generated),
        ConsistencyMode::WholeResponse => {
            let g = generated.trim();
            if g.is_empty() { vec![] } else { vec![g.to_string()] }
        }
    };
    if hypotheses.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    if reference.trim().is_empty() {
        return Err(Error::Validation("reference answer is empty".into()));
    }
    let pairs: Vec<(&str, &str)> = hypotheses.iter().map(|h| (reference, h.as_str())).collect();
    let verdicts = backend.classify_batch(&pairs)?;
    if verdicts.len() != pairs.len() {
        return Err(Error::BackendProtocol {
            backend: backend.name().to_string(),
            reason: format!("{} verdicts for {} pairs", verdicts.len(), pairs.len()),
        });
    }
    let scores: Vec<T> = verdicts.iter().map(|v| mapping.score(v.argmax())).collect();
    Ok(mean_score(&scores))
}

/// Order-independent mean (sorted summation).
fn mean_score<T: Scalar>(scores: &[T]) -> T {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted.into_iter().sum::<T>() / T::from_usize_lossy(scores.len())
}

/// Strictly below 0.50 flags a likely contradiction.
pub fn is_contradictory<T: Scalar>(score: T) -> bool {
    score < T::lit(0.5)
}

const NEGATORS: &[&str] = &[
    "not", "no", "never", "cannot", "cant", "dont", "doesnt", "isnt", "arent", "wont", "shouldnt",
    "without", "none", "neither", "nor",
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "of", "to", "in", "on",
    "for", "and", "or", "it", "its", "this", "that", "these", "those", "with", "as", "at", "by",
    "from", "can", "may", "should", "do", "does", "you", "your", "they", "their", "will", "if",
    "so", "than", "such", "also", "more", "most", "very", "has", "have", "had", "which", "who",
];

fn content_and_polarity(sentence: &str) -> (BTreeSet<String>, bool) {
    let mut negations = 0usize;
    let mut content = BTreeSet::new();
    for w in text::words(sentence) {
        if NEGATORS.contains(&w.as_str()) {
            negations += 1;
        } else if !STOPWORDS.contains(&w.as_str()) {
            content.insert(w);
        }
    }
    (content, negations % 2 == 1)
}

/// Deterministic rule backend for tests and offline runs.
///
/// * hypothesis identical (after normalization) to the premise or one of its
///   sentences: entailment,
/// * some premise sentence shares at least half of the content words (Jaccard) with
///   the hypothesis but has the opposite negation polarity: contradiction,
/// * otherwise neutral.
#[derive(Debug, Clone, Default)]
pub struct RuleNliBackend;

impl RuleNliBackend {
    pub fn classify_label(&self, premise: &str, hypothesis: &str) -> NliLabel {
        let hyp_norm = text::normalize_surface(hypothesis);
        let premise_sentences = split_sentences(premise);
        if text::normalize_surface(premise) == hyp_norm
            || premise_sentences
                .iter()
                .any(|s| text::normalize_surface(s) == hyp_norm)
        {
            return NliLabel::Entailment;
        }
        let (hyp_content, hyp_neg) = content_and_polarity(hypothesis);
        if hyp_content.is_empty() {
            return NliLabel::Neutral;
        }
        for s in &premise_sentences {
            let (content, neg) = content_and_polarity(s);
            if neg == hyp_neg || content.is_empty() {
                continue;
            }
            let inter = content.intersection(&hyp_content).count();
            let union = content.union(&hyp_content).count();
            if inter * 2 >= union {
                return NliLabel::Contradiction;
            }
        }
        NliLabel::Neutral
    }
}

impl<T: Scalar> NliBackend<T> for RuleNliBackend {
    fn name(&self) -> &str {
        "rule-nli"
    }

    fn classify_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliVerdict<T>>> {
        pairs
            .iter()
            .map(|(p, h)| {
                let (e, n, c) = match self.classify_label(p, h) {
                    NliLabel::Entailment => (0.96, 0.03, 0.01),
                    NliLabel::Neutral => (0.05, 0.90, 0.05),
                    NliLabel::Contradiction => (0.01, 0.04, 0.95),
                };
                NliVerdict::new(T::lit(e), T::lit(n), T::lit(c))
            })
            .collect()
    }
}

/// Remote NLI backend:
/// `{"pairs": [{"premise", "hypothesis"}, ...]}` -> `{"verdicts": [[e, n, c], ...]}`.
pub struct HttpNliBackend {
    client: Arc<HttpClient>,
}

impl HttpNliBackend {
    pub fn new(client: HttpClient) -> Self {
        Self {
            client: Arc::new(client),
        }
    }
}

#[derive(Deserialize)]
struct NliWire {
    verdicts: Vec<[f64; 3]>,
}

impl<T: Scalar> NliBackend<T> for HttpNliBackend {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn classify_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliVerdict<T>>> {
        let body = json!({
            "pairs": pairs
                .iter()
                .map(|(p, h)| json!({ "premise": p, "hypothesis": h }))
                .collect::<Vec<_>>()
        });
        let wire: NliWire = self.client.post_json(&body)?;
        let protocol = |reason: String| Error::BackendProtocol {
            backend: self.client.name().to_string(),
            reason,
        };
        if wire.verdicts.len() != pairs.len() {
            return Err(protocol(format!(
                "{} verdicts for {} pairs",
                wire.verdicts.len(),
                pairs.len()
            )));
        }
        wire.verdicts
            .into_iter()
            .map(|[e, n, c]| {
                NliVerdict::new(T::lit(e), T::lit(n), T::lit(c)).map_err(|err| protocol(err.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classifies hypotheses by a marker word, for exact aggregation tests.
    struct Marker;

    impl NliBackend<f64> for Marker {
        fn name(&self) -> &str {
            "marker"
        }
        fn classify_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliVerdict<f64>>> {
            pairs
                .iter()
                .map(|(_, h)| {
                    if h.contains("ENT") {
                        NliVerdict::new(0.8, 0.1, 0.1)
                    } else if h.contains("CON") {
                        NliVerdict::new(0.1, 0.1, 0.8)
                    } else {
                        NliVerdict::new(0.1, 0.8, 0.1)
                    }
                })
                .collect()
        }
    }

    fn fc(generated: &str) -> f64 {
        factual_consistency("ref", generated, &Marker, &LabelMapping::default(), ConsistencyMode::PerSentence).unwrap()
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(fc("ENT one. ENT two."), 1.0);
        assert_eq!(fc("ENT one. CON two."), 0.5);
        assert_eq!(fc("CON one. CON two! CON three?"), 0.0);
        assert_eq!(fc("Something neutral."), 0.5);
        assert!(matches!(
            factual_consistency("ref", "  ", &Marker, &LabelMapping::default(), ConsistencyMode::PerSentence),
            Err(Error::EmptyGeneration)
        ));
        let whole = factual_consistency("ref", "ENT one. CON two.", &Marker, &LabelMapping::default(), ConsistencyMode::WholeResponse).unwrap();
        assert_eq!(whole, 1.0);
    }

    #[test]
    fn threshold_is_strict() {
        assert!(is_contradictory(0.49));
        assert!(!is_contradictory(0.50));
        assert!(!is_contradictory(1.0));
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("Take two pills. Daily. Rest well! Is it 2 days? 3 days."),
            vec!["Take two pills.", "Daily.", "Rest well!", "Is it 2 days?", "3 days."]
        );
        assert_eq!(
            split_sentences("Eat fruit, e.g. Apples. See Dr. Smith today."),
            vec!["Eat fruit, e.g. Apples.", "See Dr. Smith today."]
        );
        assert_eq!(split_sentences("version 2.5 works. ok"), vec!["version 2.5 works. ok"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn rule_backend_contract() {
        let b = RuleNliBackend;
        let same: NliVerdict<f64> = nli_classify("Vaccination is recommended.", "Vaccination is recommended.", &b).unwrap();
        assert!(same.entailment >= 0.9);
        let neg: NliVerdict<f64> = nli_classify("Aspirin is recommended for children.", "Aspirin is not recommended for children.", &b).unwrap();
        assert_eq!(neg.argmax(), NliLabel::Contradiction);
        let unrelated: NliVerdict<f64> = nli_classify("Measles spreads through the air.", "Insulin regulates blood sugar.", &b).unwrap();
        assert_eq!(unrelated.argmax(), NliLabel::Neutral);
    }

    #[test]
    fn verdict_invariants() {
        assert!(NliVerdict::new(0.5, 0.5, 0.1).is_err());
        assert!(NliVerdict::new(-0.1, 0.6, 0.5).is_err());
        assert_eq!(NliVerdict::new(0.4, 0.4, 0.2).unwrap().argmax(), NliLabel::Entailment);
    }
}
