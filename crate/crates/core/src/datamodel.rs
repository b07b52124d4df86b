//! Shared record types and the toolkit's file formats.
//!
//! Dataset and response files are line-delimited JSON, one record per line. Result
//! files come in two formats: a CSV row table with a fixed column set and a JSON array
//! that reloads exactly.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::scalar::{in_unit, Scalar};
use crate::scoring::{compose_vb, FailureThresholds, WeightScheme};

pub const DATASET_KEYS: [&str; 7] = [
    "id",
    "source",
    "topic",
    "disease_category",
    "question_type",
    "question",
    "reference_answer",
];

pub const RESPONSE_KEYS: [&str; 7] = [
    "sample_id",
    "model_id",
    "prompt_config",
    "text",
    "input_tokens",
    "output_tokens",
    "created_at",
];

pub const RESULT_COLUMNS: [&str; 10] = [
    "sample_id",
    "model_id",
    "prompt_config",
    "entity_f1",
    "semantic_similarity",
    "factual_consistency",
    "structured_overlap",
    "vb_score",
    "weight_scheme",
    "failure_flags",
];

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Validation(format!(
                        "unknown {} `{}`", stringify!($name), other
                    ))),
                }
            }
        }
    };
}

string_enum!(
    /// Authoritative source of a reference answer.
    Source {
        Cdc => "CDC",
        Who => "WHO",
        Nhs => "NHS",
        MayoClinic => "MayoClinic",
        Other => "Other",
    }
);

string_enum!(
    DiseaseCategory {
        Infectious => "Infectious",
        Chronic => "Chronic",
        Other => "Other",
    }
);

string_enum!(
    QuestionType {
        Definition => "Definition",
        GeneralHealth => "GeneralHealth",
        Treatment => "Treatment",
        Prevention => "Prevention",
        Other => "Other",
    }
);

string_enum!(
    /// The four prompt configurations of the sensitivity sweep.
    PromptConfigKind {
        ZeroShotBaseline => "ZeroShotBaseline",
        ZeroShotStrict => "ZeroShotStrict",
        RagContext => "RAGContext",
        FewShot => "FewShot",
    }
);

string_enum!(
    FailureFlag {
        EntityFail => "EntityFail",
        SemanticFail => "SemanticFail",
        FactualFail => "FactualFail",
        StructureFail => "StructureFail",
        SystemicFail => "SystemicFail",
    }
);

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QARecord {
    pub id: String,
    pub source: Source,
    pub topic: String,
    pub disease_category: DiseaseCategory,
    pub question_type: QuestionType,
    pub question: String,
    pub reference_answer: String,
}

impl QARecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Validation("id is empty".into()));
        }
        if self.question.trim().is_empty() {
            return Err(Error::Validation(format!("{}: question is empty", self.id)));
        }
        if self.reference_answer.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{}: reference_answer is empty",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 300,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

impl GenerationParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Validation("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Validation("max_tokens must be > 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Validation("top_p must lie in (0, 1]".into()));
        }
        if !self.frequency_penalty.is_finite() || !self.presence_penalty.is_finite() {
            return Err(Error::Validation("penalties must be finite".into()));
        }
        Ok(())
    }
}

/// A generated answer plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelResponse {
    pub sample_id: String,
    pub model_id: String,
    pub prompt_config: PromptConfigKind,
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub created_at: DateTime<Utc>,
}

/// The four per-sample component values, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentScores<T> {
    pub entity_f1: T,
    pub semantic_similarity: T,
    pub factual_consistency: T,
    pub structured_overlap: T,
}

impl<T: Scalar> ComponentScores<T> {
    pub fn new(entity_f1: T, semantic_similarity: T, factual_consistency: T, structured_overlap: T) -> Self {
        Self {
            entity_f1,
            semantic_similarity,
            factual_consistency,
            structured_overlap,
        }
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v, v)
    }

    pub fn as_array(&self) -> [T; 4] {
        [
            self.entity_f1,
            self.semantic_similarity,
            self.factual_consistency,
            self.structured_overlap,
        ]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in COMPONENT_NAMES.iter().zip(self.as_array()) {
            if !in_unit(v) {
                return Err(Error::Validation(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Componentwise mean of a nonempty slice.
    pub fn mean_of(items: &[Self]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = T::from_usize_lossy(items.len());
        let mut acc = [T::zero(); 4];
        for item in items {
            for (a, v) in acc.iter_mut().zip(item.as_array()) {
                *a = *a + v;
            }
        }
        Some(Self::from_array(acc.map(|a| a / n)))
    }
}

pub const COMPONENT_NAMES: [&str; 4] = [
    "entity_f1",
    "semantic_similarity",
    "factual_consistency",
    "structured_overlap",
];

/// Scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBScoreResult {
    pub sample_id: String,
    pub model_id: String,
    pub prompt_config: PromptConfigKind,
    pub components: ComponentScores<f64>,
    pub vb_score: f64,
    pub weight_scheme: String,
    pub failure_flags: BTreeSet<FailureFlag>,
}

impl VBScoreResult {
    pub fn flags_joined(&self) -> String {
        let mut names: Vec<&str> = self.failure_flags.iter().map(|f| f.as_str()).collect();
        names.sort_unstable();
        names.join(";")
    }

    pub fn has(&self, flag: FailureFlag) -> bool {
        self.failure_flags.contains(&flag)
    }
}

/// Consistency check applied to every result before it is written.
pub struct ResultCheck<'a> {
    pub schemes: &'a [WeightScheme<f64>],
    pub thresholds: FailureThresholds<f64>,
}

impl ResultCheck<'_> {
    pub const VB_TOLERANCE: f64 = 1e-12;

    pub fn check(&self, r: &VBScoreResult) -> Result<()> {
        r.components.validate()?;
        let scheme = self
            .schemes
            .iter()
            .find(|s| s.name == r.weight_scheme)
            .ok_or_else(|| Error::UnknownScheme(r.weight_scheme.clone()))?;
        let expected = compose_vb(&r.components, scheme);
        if (expected - r.vb_score).abs() > Self::VB_TOLERANCE {
            return Err(Error::Validation(format!(
                "{}/{}: vb_score {} disagrees with scheme `{}` ({})",
                r.sample_id, r.model_id, r.vb_score, scheme.name, expected
            )));
        }
        let systemic = r.vb_score < self.thresholds.overall;
        if systemic != r.has(FailureFlag::SystemicFail) {
            return Err(Error::Validation(format!(
                "{}/{}: SystemicFail flag inconsistent with vb_score {}",
                r.sample_id, r.model_id, r.vb_score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultFormat {
    Rows,
    Json,
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_object(line: &str, lineno: usize) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::MalformedLine {
            line: lineno,
            reason: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::MalformedLine {
            line: lineno,
            reason: e.to_string(),
        }),
    }
}

fn check_keys(map: &Map<String, Value>, keys: &[&str], lineno: usize) -> Result<()> {
    for key in keys {
        if !map.contains_key(*key) {
            return Err(Error::MissingField {
                field: (*key).to_string(),
                line: lineno,
            });
        }
    }
    if let Some(extra) = map.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(Error::MalformedLine {
            line: lineno,
            reason: format!("unexpected field `{extra}`"),
        });
    }
    Ok(())
}

fn non_blank_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses a dataset from line-delimited JSON text.
pub fn parse_dataset(content: &str) -> Result<Vec<QARecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (lineno, line) in non_blank_lines(content) {
        let map = parse_object(line, lineno)?;
        check_keys(&map, &DATASET_KEYS, lineno)?;
        let record: QARecord =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::MalformedLine {
                line: lineno,
                reason: e.to_string(),
            })?;
        record.validate().map_err(|e| Error::MalformedLine {
            line: lineno,
            reason: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId {
                id: record.id,
                line: lineno,
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QARecord>> {
    parse_dataset(&read_lines(path.as_ref())?)
}

pub fn save_dataset(records: &[QARecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(records, path.as_ref())
}

/// Parses responses, resolving every `sample_id` against `dataset`.
pub fn parse_responses(content: &str, dataset: &[QARecord]) -> Result<Vec<ModelResponse>> {
    let ids: HashSet<&str> = dataset.iter().map(|r| r.id.as_str()).collect();
    let mut out = Vec::new();
    for (lineno, line) in non_blank_lines(content) {
        let map = parse_object(line, lineno)?;
        check_keys(&map, &RESPONSE_KEYS, lineno)?;
        for key in ["input_tokens", "output_tokens"] {
            if let Some(n) = map[key].as_i64() {
                if n < 0 {
                    return Err(Error::Validation(format!(
                        "line {lineno}: {key} must be nonnegative, got {n}"
                    )));
                }
            }
        }
        let response: ModelResponse =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::MalformedLine {
                line: lineno,
                reason: e.to_string(),
            })?;
        if !ids.contains(response.sample_id.as_str()) {
            return Err(Error::UnknownSampleId {
                id: response.sample_id,
                line: lineno,
            });
        }
        out.push(response);
    }
    Ok(out)
}

pub fn load_responses(path: impl AsRef<Path>, dataset: &[QARecord]) -> Result<Vec<ModelResponse>> {
    parse_responses(&read_lines(path.as_ref())?, dataset)
}

pub fn save_responses(responses: &[ModelResponse], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(responses, path.as_ref())
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::Validation(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Renders results as the CSV row table.
pub fn results_to_rows(results: &[VBScoreResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(e.to_string());
    w.write_record(RESULT_COLUMNS).map_err(csv_err)?;
    for r in results {
        let c = &r.components;
        w.write_record([
            r.sample_id.clone(),
            r.model_id.clone(),
            r.prompt_config.to_string(),
            c.entity_f1.to_string(),
            c.semantic_similarity.to_string(),
            c.factual_consistency.to_string(),
            c.structured_overlap.to_string(),
            r.vb_score.to_string(),
            r.weight_scheme.clone(),
            r.flags_joined(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Validation(e.to_string()))
}

/// Validates every result with `check`, then writes them atomically.
pub fn write_results(
    results: &[VBScoreResult],
    path: impl AsRef<Path>,
    format: ResultFormat,
    check: &ResultCheck<'_>,
) -> Result<()> {
    for r in results {
        check.check(r)?;
    }
    let bytes = match format {
        ResultFormat::Rows => results_to_rows(results)?,
        ResultFormat::Json => {
            let mut b = serde_json::to_vec_pretty(results)
                .map_err(|e| Error::Validation(e.to_string()))?;
            b.push(b'\n');
            b
        }
    };
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_results_json(path: impl AsRef<Path>) -> Result<Vec<VBScoreResult>> {
    let path = path.as_ref();
    let content = read_lines(path)?;
    serde_json::from_str(&content).map_err(|e| Error::MalformedLine {
        line: e.line(),
        reason: e.to_string(),
    })
}
