//! Medical entity extraction, normalization, matching and precision/recall/F1.
//!
//! Matching rules (a pair matches when any holds, checked in this order for the
//! reported reason):
//!
//! 1. surfaces identical ([`MatchReason::Exact`]),
//! 2. normalized forms identical without abbreviation canonicalization
//!    ([`MatchReason::CaseNormalized`]),
//! 3. normalized forms identical once abbreviations are canonicalized
//!    ([`MatchReason::Abbreviation`]),
//! 4. one normalized string contains the other ([`MatchReason::WholeSubstring`]),
//! 5. a token of one, at least `min_token_len` characters long, is a substring of a
//!    token of the other ([`MatchReason::TokenSubstring`]).
//!
//! Paraphrases and synonyms that are not in the abbreviation table never match.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::HttpClient;
use crate::scalar::Scalar;
use crate::text::{self, strip_leading_articles};

pub const DEFAULT_MIN_TOKEN_LEN: usize = 4;

/// Abbreviation pairs shipped by default (`short`, `long`).
pub const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.tsv");

/// Default gazetteer for the reference extraction backend, one phrase per line.
pub const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.txt");

/// Maps every known surface form (as a normalized token sequence) to one canonical form.
///
/// Pairs are merged transitively: if `a <-> b` and `b <-> c` are both listed, all three
/// canonicalize to the same form, the longest member of the group.
#[derive(Debug, Clone, Default)]
pub struct AbbreviationTable {
    canonical: HashMap<Vec<String>, String>,
    max_len: usize,
    pairs: Vec<(String, String)>,
}

impl AbbreviationTable {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut normalized: Vec<(String, String)> = Vec::new();
        for (short, long) in pairs {
            let s = text::normalize_surface(short.as_ref());
            let l = text::normalize_surface(long.as_ref());
            if s.is_empty() || l.is_empty() {
                return Err(Error::Config(format!(
                    "abbreviation pair `{}` / `{}` is empty after normalization",
                    short.as_ref(),
                    long.as_ref()
                )));
            }
            if s != l {
                normalized.push((s, l));
            }
        }

        // union-find over surface strings
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (s, l) in &normalized {
            for k in [s, l] {
                let n = index.len();
                index.entry(k.clone()).or_insert(n);
            }
        }
        let mut parent: Vec<usize> = (0..index.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (s, l) in &normalized {
            let a = find(&mut parent, index[s]);
            let b = find(&mut parent, index[l]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
        for (k, &i) in &index {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(k);
        }
        let mut canonical = HashMap::new();
        let mut max_len = 0;
        for members in groups.values() {
            let canon = members
                .iter()
                .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.cmp(a)))
                .expect("nonempty group");
            for m in members {
                let toks: Vec<String> = m.split(' ').map(str::to_string).collect();
                max_len = max_len.max(toks.len());
                canonical.insert(toks, (*canon).clone());
            }
        }
        let table = Self {
            canonical,
            max_len,
            pairs: normalized,
        };
        table.check_idempotent()?;
        Ok(table)
    }

    /// Parses `short<TAB>long` lines; blank lines and `#` comments are skipped.
    pub fn parse(content: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(l), None) => pairs.push((s.to_string(), l.to_string())),
                _ => {
                    return Err(Error::MalformedLine {
                        line: i + 1,
                        reason: "expected `short<TAB>long`".into(),
                    })
                }
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content)
    }

    pub fn default_table() -> Self {
        Self::parse(DEFAULT_ABBREVIATIONS).expect("shipped abbreviation table is valid")
    }

    /// Adds pairs on top of this table.
    pub fn extended<I, S>(&self, extra: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut all: Vec<(String, String)> = self.pairs.clone();
        all.extend(
            extra
                .into_iter()
                .map(|(a, b)| (a.as_ref().to_string(), b.as_ref().to_string())),
        );
        Self::from_pairs(all)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Rewrites every maximal known surface span (longest match first) to its canonical form.
    pub fn canonicalize_tokens(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_len.min(tokens.len() - i))
                .rev()
                .find_map(|n| self.canonical.get(&tokens[i..i + n]).map(|c| (n, c)));
            match longest {
                Some((n, canon)) => {
                    out.extend(canon.split(' ').map(str::to_string));
                    i += n;
                }
                None => {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        out
    }

    /// Canonical form of a whole surface, if the table knows it.
    pub fn canonical_of(&self, normalized: &str) -> Option<&str> {
        let toks: Vec<String> = normalized.split(' ').map(str::to_string).collect();
        self.canonical.get(&toks).map(String::as_str)
    }

    fn check_idempotent(&self) -> Result<()> {
        for canon in self.canonical.values() {
            let toks: Vec<String> = canon.split(' ').map(str::to_string).collect();
            if self.canonicalize_tokens(&toks) != toks {
                return Err(Error::Config(format!(
                    "abbreviation table is not idempotent: canonical form `{canon}` rewrites further"
                )));
            }
        }
        Ok(())
    }
}

/// Lowercase, punctuation-stripped, article-stripped, whitespace-collapsed form.
/// Abbreviations are not canonicalized.
pub fn normalize_plain(raw: &str) -> String {
    let toks = text::words(raw);
    strip_leading_articles(&toks).join(" ")
}

/// Full entity normalization. Idempotent: canonicalization is iterated to a fixpoint,
/// so rewrites that create new abbreviation spans are resolved in one call.
pub fn normalize_entity(raw: &str, table: &AbbreviationTable) -> Result<String> {
    let toks = text::words(raw);
    let mut current: Vec<String> = strip_leading_articles(&toks).to_vec();
    for _ in 0..MAX_CANON_ROUNDS {
        if current.is_empty() {
            break;
        }
        let next = table.canonicalize_tokens(&current);
        let next = strip_leading_articles(&next).to_vec();
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        return Err(Error::EmptyAfterNormalization(raw.to_string()));
    }
    Ok(current.join(" "))
}

const MAX_CANON_ROUNDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Normalized entities with the surfaces they came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    /// normalized form -> original surfaces
    entities: BTreeMap<String, BTreeSet<String>>,
    pub raw_spans: Vec<RawSpan>,
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from raw surfaces; surfaces that normalize to nothing are skipped.
    pub fn from_surfaces<I, S>(surfaces: I, table: &AbbreviationTable) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for s in surfaces {
            set.insert(s.as_ref(), table);
        }
        set
    }

    pub fn insert(&mut self, surface: &str, table: &AbbreviationTable) -> Option<String> {
        let norm = normalize_entity(surface, table).ok()?;
        self.entities
            .entry(norm.clone())
            .or_default()
            .insert(surface.trim().to_string());
        Some(norm)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.entities.contains_key(normalized)
    }

    pub fn surfaces(&self, normalized: &str) -> impl Iterator<Item = &str> {
        self.entities
            .get(normalized)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchReason {
    Exact,
    CaseNormalized,
    Abbreviation,
    WholeSubstring,
    TokenSubstring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub reference: String,
    pub generated: String,
    pub reason: MatchReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Every matching (reference, generated) pair; matching is any-to-any.
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched_reference: BTreeSet<String>,
    pub unmatched_generated: BTreeSet<String>,
    pub reference_total: usize,
    pub generated_total: usize,
}

impl MatchReport {
    pub fn matched_reference(&self) -> BTreeSet<&str> {
        self.matched_pairs.iter().map(|p| p.reference.as_str()).collect()
    }

    pub fn matched_generated(&self) -> BTreeSet<&str> {
        self.matched_pairs.iter().map(|p| p.generated.as_str()).collect()
    }
}

fn token_substring(a: &str, b: &str, min_token_len: usize) -> bool {
    let long_tokens = |s: &'_ str| -> Vec<String> {
        s.split(' ')
            .filter(|t| t.chars().count() >= min_token_len)
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    let a_long = long_tokens(a);
    let b_long = long_tokens(b);
    a_long.iter().any(|t| b.split(' ').any(|u| u.contains(t.as_str())))
        || b_long.iter().any(|t| a.split(' ').any(|u| u.contains(t.as_str())))
}

/// Decides whether two normalized entities match, and why.
///
/// `ref_surfaces` and `gen_surfaces` are the original surfaces, used only to tell an
/// exact match from a case-normalized one.
pub fn match_pair<'a>(
    reference: &str,
    generated: &str,
    ref_surfaces: impl IntoIterator<Item = &'a str>,
    gen_surfaces: impl IntoIterator<Item = &'a str>,
    min_token_len: usize,
) -> Option<MatchReason> {
    if reference == generated {
        let rs: Vec<&str> = ref_surfaces.into_iter().collect();
        let gs: Vec<&str> = gen_surfaces.into_iter().collect();
        if rs.is_empty() && gs.is_empty() || rs.iter().any(|r| gs.contains(r)) {
            return Some(MatchReason::Exact);
        }
        let plain = |v: &[&str]| -> BTreeSet<String> { v.iter().map(|s| normalize_plain(s)).collect() };
        let (rp, gp) = (plain(&rs), plain(&gs));
        // surfaces missing on one side (pre-normalized input) count as plain forms
        let rp = if rp.is_empty() { BTreeSet::from([reference.to_string()]) } else { rp };
        let gp = if gp.is_empty() { BTreeSet::from([generated.to_string()]) } else { gp };
        if rp.intersection(&gp).next().is_some() {
            return Some(MatchReason::CaseNormalized);
        }
        return Some(MatchReason::Abbreviation);
    }
    if reference.contains(generated) || generated.contains(reference) {
        return Some(MatchReason::WholeSubstring);
    }
    if token_substring(reference, generated, min_token_len) {
        return Some(MatchReason::TokenSubstring);
    }
    None
}

/// Matches every reference entity against every generated entity.
pub fn match_entities(
    reference: &EntitySet,
    generated: &EntitySet,
    min_token_len: usize,
) -> MatchReport {
    let mut report = MatchReport {
        reference_total: reference.len(),
        generated_total: generated.len(),
        ..Default::default()
    };
    let mut gen_hit: BTreeSet<&str> = BTreeSet::new();
    for r in reference.iter() {
        let mut hit = false;
        for g in generated.iter() {
            if let Some(reason) = match_pair(
                r,
                g,
                reference.surfaces(r),
                generated.surfaces(g),
                min_token_len,
            ) {
                hit = true;
                gen_hit.insert(g);
                report.matched_pairs.push(MatchedPair {
                    reference: r.to_string(),
                    generated: g.to_string(),
                    reason,
                });
            }
        }
        if !hit {
            report.unmatched_reference.insert(r.to_string());
        }
    }
    report.unmatched_generated = generated
        .iter()
        .filter(|g| !gen_hit.contains(g))
        .map(str::to_string)
        .collect();
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Precision over generated entities, recall over reference entities, and their
/// harmonic mean. Empty denominators score 0.
pub fn entity_prf<T: Scalar>(report: &MatchReport) -> Prf<T> {
    if report.reference_total == 0 && report.generated_total == 0 {
        log::warn!("entity F1 with both entity sets empty; scoring 0");
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::from_usize_lossy(num) / T::from_usize_lossy(den)
        }
    };
    let precision = ratio(report.matched_generated().len(), report.generated_total);
    let recall = ratio(report.matched_reference().len(), report.reference_total);
    let f1 = if precision + recall > T::zero() {
        T::lit(2.0) * precision * recall / (precision + recall)
    } else {
        T::zero()
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// A surface found by an extraction backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub text: String,
    pub span: Option<(usize, usize)>,
}

pub trait EntityBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Extracts entity surfaces for each text, aligned by index.
    fn extract_batch(&self, texts: &[&str]) -> Result<Vec<Vec<Extracted>>>;
}

/// Extracts entities from `text` and normalizes them.
pub fn extract_entities(
    text: &str,
    backend: &dyn EntityBackend,
    table: &AbbreviationTable,
) -> Result<EntitySet> {
    if text.trim().is_empty() {
        return Ok(EntitySet::new());
    }
    let mut batch = backend.extract_batch(&[text])?;
    if batch.len() != 1 {
        return Err(Error::BackendProtocol {
            backend: backend.name().to_string(),
            reason: format!("expected 1 result, got {}", batch.len()),
        });
    }
    let mut set = EntitySet::new();
    for e in batch.remove(0) {
        if set.insert(&e.text, table).is_some() {
            if let Some((start, end)) = e.span {
                set.raw_spans.push(RawSpan {
                    text: e.text.clone(),
                    start,
                    end,
                });
            }
        }
    }
    Ok(set)
}

/// Deterministic gazetteer backend: finds lexicon phrases on token boundaries,
/// preferring the longest phrase at each position.
#[derive(Debug, Clone)]
pub struct LexiconBackend {
    phrases: HashMap<Vec<String>, ()>,
    max_len: usize,
}

impl LexiconBackend {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut map = HashMap::new();
        let mut max_len = 0;
        for p in phrases {
            let toks = text::words(p.as_ref());
            if toks.is_empty() {
                continue;
            }
            max_len = max_len.max(toks.len());
            map.insert(toks, ());
        }
        Self {
            phrases: map,
            max_len,
        }
    }

    /// One phrase per line; `#` comments and blank lines ignored.
    pub fn parse(content: &str) -> Self {
        Self::new(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&content))
    }

    pub fn default_lexicon() -> Self {
        Self::parse(DEFAULT_LEXICON)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn extract(&self, source: &str) -> Vec<Extracted> {
        let tokens = text::tokenize(source);
        let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let hit = (1..=self.max_len.min(words.len() - i))
                .rev()
                .find(|&n| self.phrases.contains_key(&words[i..i + n]));
            match hit {
                Some(n) => {
                    let (start, end) = (tokens[i].start, tokens[i + n - 1].end);
                    out.push(Extracted {
                        text: source[start..end].to_string(),
                        span: Some((start, end)),
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

impl EntityBackend for LexiconBackend {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn extract_batch(&self, texts: &[&str]) -> Result<Vec<Vec<Extracted>>> {
        Ok(texts.iter().map(|t| self.extract(t)).collect())
    }
}

/// Remote extraction backend: `{"texts": [...]}` -> `{"entities": [[...], ...]}`.
pub struct HttpEntityBackend {
    client: Arc<HttpClient>,
}

impl HttpEntityBackend {
    pub fn new(client: HttpClient) -> Self {
        Self {
            client: Arc::new(client),
        }
    }
}

#[derive(Deserialize)]
struct EntityWire {
    entities: Vec<Vec<String>>,
}

impl EntityBackend for HttpEntityBackend {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn extract_batch(&self, texts: &[&str]) -> Result<Vec<Vec<Extracted>>> {
        let wire: EntityWire = self.client.post_json(&json!({ "texts": texts }))?;
        if wire.entities.len() != texts.len() {
            return Err(Error::BackendProtocol {
                backend: self.name().to_string(),
                reason: format!(
                    "{} entity lists for {} texts",
                    wire.entities.len(),
                    texts.len()
                ),
            });
        }
        Ok(wire
            .entities
            .into_iter()
            .zip(texts)
            .map(|(list, source)| {
                let lower = source.to_lowercase();
                list.into_iter()
                    .map(|e| {
                        // byte offsets are only reliable when lowercasing kept lengths
                        let span = if lower.len() == source.len() {
                            lower.find(&e.to_lowercase()).map(|s| (s, s + e.len()))
                        } else {
                            None
                        };
                        Extracted { text: e, span }
                    })
                    .collect()
            })
            .collect())
    }
}

/// Extraction recall against a user-supplied gold entity list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionAudit {
    pub gold_total: usize,
    pub detected: usize,
    pub recall: f64,
    pub missed: Vec<String>,
}

/// Counts gold entities that some extracted entity matches under the usual rules.
pub fn audit_extraction(
    extracted: &EntitySet,
    gold: &[String],
    table: &AbbreviationTable,
    min_token_len: usize,
) -> ExtractionAudit {
    let gold_set = EntitySet::from_surfaces(gold, table);
    let report = match_entities(&gold_set, extracted, min_token_len);
    let detected = gold_set.len() - report.unmatched_reference.len();
    ExtractionAudit {
        gold_total: gold_set.len(),
        detected,
        recall: if gold_set.is_empty() {
            0.0
        } else {
            detected as f64 / gold_set.len() as f64
        },
        missed: report.unmatched_reference.into_iter().collect(),
    }
}
