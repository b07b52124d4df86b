//! Prompt rendering, model calls with caching and retries, and cost accounting.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::datamodel::{GenerationParams, ModelResponse, PromptConfigKind, QARecord};
use crate::error::{Error, Result};
use crate::factual::split_sentences;
use crate::http::HttpClient;

// ---------------------------------------------------------------------------
// prompts

pub const BASELINE_PERSONA: &str = "You are a helpful medical information assistant. Answer the following health question based on reliable medical knowledge. Provide accurate, clear, and concise information suitable for a general audience.";

pub const QUESTION_FRAME: &str = "Question: {question} Answer:";

pub const DEFAULT_STRICT_BLOCK: &str = "When your answer involves medical entities, name each disease, symptom, medication, test, or procedure explicitly using its standard medical term, and give the common name or abbreviation alongside it. Keep dosages and units exact. List multiple symptoms, causes, or treatments as separate items.";

pub const DEFAULT_RAG_PREAMBLE: &str = "Use the authoritative reference information below to answer. Base your answer on this information and do not contradict it.";

pub const DEFAULT_FEW_SHOT_INTRO: &str = "Here are examples of well-formed answers.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub answer: String,
}

pub fn default_few_shot_examples() -> Vec<FewShotExample> {
    vec![
        FewShotExample {
            question: "What is hypertension?".into(),
            answer: "Hypertension (high blood pressure) is a condition in which the force of blood against artery walls stays too high. It raises the risk of heart disease, stroke, and kidney disease. Risk factors include:\n- excess salt intake\n- obesity\n- physical inactivity\nTreatment combines lifestyle changes with medications such as ACE inhibitors or diuretics.".into(),
        },
        FewShotExample {
            question: "How can influenza be prevented?".into(),
            answer: "Influenza (flu) is best prevented by a yearly flu vaccine. Other measures include:\n- washing hands often with soap and water\n- covering coughs and sneezes\n- staying home when sick\nAntiviral medications such as oseltamivir may be prescribed for people at high risk.".into(),
        },
    ]
}

/// Editable prompt text. The baseline persona and question frame render the shipped
/// baseline template verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub persona: String,
    /// Must contain `{question}`.
    pub question_frame: String,
    pub strict_block: String,
    pub rag_preamble: String,
    pub few_shot_intro: String,
    pub few_shot_examples: Vec<FewShotExample>,
    pub few_shot_count: usize,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            persona: BASELINE_PERSONA.into(),
            question_frame: QUESTION_FRAME.into(),
            strict_block: DEFAULT_STRICT_BLOCK.into(),
            rag_preamble: DEFAULT_RAG_PREAMBLE.into(),
            few_shot_intro: DEFAULT_FEW_SHOT_INTRO.into(),
            few_shot_examples: default_few_shot_examples(),
            few_shot_count: 2,
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        if !self.question_frame.contains("{question}") {
            return Err(Error::Config("question_frame must contain {question}".into()));
        }
        if self.few_shot_examples.len() != self.few_shot_count {
            return Err(Error::FewShotExamples {
                expected: self.few_shot_count,
                got: self.few_shot_examples.len(),
            });
        }
        Ok(())
    }
}

/// A fully specified prompt configuration for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub kind: PromptConfigKind,
    pub instruction_text: String,
    pub question_frame: String,
    /// Few-shot only.
    pub examples: Vec<FewShotExample>,
    pub expected_examples: usize,
    /// RAG only.
    pub context: Option<String>,
}

impl PromptConfig {
    /// Builds the configuration of `kind` for `record`; RAG context is the record's
    /// reference answer.
    pub fn build(kind: PromptConfigKind, templates: &PromptTemplates, record: &QARecord) -> Self {
        let join = |extra: &str| format!("{} {}", templates.persona, extra);
        let (instruction_text, examples, context) = match kind {
            PromptConfigKind::ZeroShotBaseline => (templates.persona.clone(), Vec::new(), None),
            PromptConfigKind::ZeroShotStrict => (join(&templates.strict_block), Vec::new(), None),
            PromptConfigKind::RagContext => (
                join(&templates.rag_preamble),
                Vec::new(),
                Some(record.reference_answer.clone()),
            ),
            PromptConfigKind::FewShot => (
                join(&templates.few_shot_intro),
                templates.few_shot_examples.clone(),
                None,
            ),
        };
        Self {
            kind,
            instruction_text,
            question_frame: templates.question_frame.clone(),
            examples,
            expected_examples: templates.few_shot_count,
            context,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PromptConfigKind::RagContext => {
                if self.context.as_deref().is_none_or(|c| c.trim().is_empty()) {
                    return Err(Error::MissingContext);
                }
            }
            PromptConfigKind::FewShot
                if self.examples.len() != self.expected_examples => {
                    return Err(Error::FewShotExamples {
                        expected: self.expected_examples,
                        got: self.examples.len(),
                    });
                }
            _ => {}
        }
        Ok(())
    }
}

fn frame(template: &str, question: &str) -> String {
    template.replace("{question}", question)
}

pub fn render_prompt(config: &PromptConfig, record: &QARecord) -> Result<String> {
    record.validate()?;
    config.validate()?;
    let target = frame(&config.question_frame, &record.question);
    Ok(match config.kind {
        PromptConfigKind::ZeroShotBaseline | PromptConfigKind::ZeroShotStrict => {
            format!("{} {}", config.instruction_text, target)
        }
        PromptConfigKind::RagContext => format!(
            "{}\n\nContext:\n{}\n\n{}",
            config.instruction_text,
            config.context.as_deref().unwrap_or_default().trim(),
            target
        ),
        PromptConfigKind::FewShot => {
            let mut out = config.instruction_text.clone();
            for ex in &config.examples {
                out.push_str("\n\n");
                out.push_str(&frame(&config.question_frame, &ex.question));
                out.push(' ');
                out.push_str(ex.answer.trim());
            }
            out.push_str("\n\n");
            out.push_str(&target);
            out
        }
    })
}

/// Whitespace-delimited word count, the token proxy used when a backend reports no usage.
pub fn approx_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

// ---------------------------------------------------------------------------
// model backends

/// Raw completion as returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

pub trait ModelBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion>;
}

/// Generic chat-completion backend:
/// `{"model", "prompt", "params"}` -> `{"text", "usage": {"input_tokens", "output_tokens"}}`.
pub struct HttpModelBackend {
    model_id: String,
    client: HttpClient,
}

impl HttpModelBackend {
    pub fn new(model_id: impl Into<String>, client: HttpClient) -> Self {
        Self {
            model_id: model_id.into(),
            client,
        }
    }

    /// Adds a credential header read from `env_var`; a missing variable is an
    /// authentication error.
    pub fn with_credentials(
        model_id: impl Into<String>,
        client: HttpClient,
        header: &str,
        scheme_prefix: &str,
        env_var: &str,
    ) -> Result<Self> {
        let key = std::env::var(env_var).map_err(|_| Error::Authentication {
            backend: format!("{} (set {env_var})", client.name()),
        })?;
        Ok(Self::new(model_id, client.header(header, format!("{scheme_prefix}{key}"))))
    }
}

#[derive(Deserialize)]
struct Usage {
    input_tokens: u64,
    output_tokens: u64,
}

#[derive(Deserialize)]
struct CompletionWire {
    text: String,
    #[serde(default)]
    usage: Option<Usage>,
}

impl ModelBackend for HttpModelBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion> {
        let body = json!({ "model": self.model_id, "prompt": prompt, "params": params });
        let wire: CompletionWire = self.client.post_json(&body)?;
        Ok(Completion {
            text: wire.text,
            input_tokens: wire.usage.as_ref().map(|u| u.input_tokens),
            output_tokens: wire.usage.as_ref().map(|u| u.output_tokens),
        })
    }
}

/// Knobs of the deterministic stand-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    /// Probability that each reference sentence is reproduced.
    pub keep: f64,
    /// Probability that a reproduced sentence has its polarity flipped.
    pub negate: f64,
    /// Generic sentence appended to every answer.
    pub filler: String,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            keep: 0.5,
            negate: 0.1,
            filler: "Please consult a healthcare professional for advice about your situation.".into(),
        }
    }
}

/// Deterministic model that answers from a known question → reference table.
///
/// Each reference sentence is kept or dropped (and possibly negated) by a hash of the
/// model id, prompt instructions, question and sentence index. When the prompt itself contains the
/// reference (RAG context) every sentence is kept unaltered.
pub struct SyntheticModel {
    model_id: String,
    references: HashMap<String, String>,
    profile: SyntheticProfile,
}

impl SyntheticModel {
    pub fn new(model_id: impl Into<String>, dataset: &[QARecord], profile: SyntheticProfile) -> Self {
        Self {
            model_id: model_id.into(),
            references: dataset
                .iter()
                .map(|r| (r.question.trim().to_string(), r.reference_answer.clone()))
                .collect(),
            profile,
        }
    }

    fn unit_hash(&self, parts: &[&str]) -> f64 {
        let mut h = Sha256::new();
        h.update(self.model_id.as_bytes());
        for p in parts {
            h.update([0u8]);
            h.update(p.as_bytes());
        }
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        (u64::from_be_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn question_of(prompt: &str) -> Option<&str> {
        let start = prompt.rfind("Question:")? + "Question:".len();
        let rest = &prompt[start..];
        let end = rest.rfind("Answer:").unwrap_or(rest.len());
        Some(rest[..end].trim())
    }
}

fn negate_sentence(s: &str) -> String {
    for (from, to) in [(" is ", " is not "), (" are ", " are not "), (" can ", " cannot ")] {
        if s.contains(from) {
            return s.replacen(from, to, 1);
        }
    }
    format!("It is not true that {}", s.trim_start())
}

impl ModelBackend for SyntheticModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<Completion> {
        let question = Self::question_of(prompt).unwrap_or_default();
        let instructions = &prompt[..prompt.rfind("Question:").unwrap_or(0)];
        let text = match self.references.get(question) {
            None => "I do not have reliable information about that question.".to_string(),
            Some(reference) if prompt.contains(reference.trim()) => reference.trim().to_string(),
            Some(reference) => {
                let mut kept = Vec::new();
                for (i, sentence) in split_sentences(reference).iter().enumerate() {
                    let idx = i.to_string();
                    if i > 0 && self.unit_hash(&[instructions, question, &idx, "keep"]) >= self.profile.keep {
                        continue;
                    }
                    if self.unit_hash(&[instructions, question, &idx, "negate"]) < self.profile.negate {
                        kept.push(negate_sentence(sentence));
                    } else {
                        kept.push(sentence.clone());
                    }
                }
                if !self.profile.filler.is_empty() {
                    kept.push(self.profile.filler.clone());
                }
                kept.join(" ")
            }
        };
        Ok(Completion {
            input_tokens: Some(approx_tokens(prompt)),
            output_tokens: Some(approx_tokens(&text)),
            text,
        })
    }
}

// ---------------------------------------------------------------------------
// cache

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    prompt: &'a str,
    params: &'a GenerationParams,
}

/// SHA-256 digest of `(model_id, prompt, params)` as lowercase hex.
pub fn cache_key(model_id: &str, prompt: &str, params: &GenerationParams) -> String {
    let material = serde_json::to_vec(&KeyMaterial {
        model: model_id,
        prompt,
        params,
    })
    .expect("key material serializes");
    hex::encode(Sha256::digest(&material))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: ModelResponse,
}

#[derive(Default)]
struct CacheState {
    entries: HashMap<String, ModelResponse>,
    file: Option<File>,
}

/// Append-only JSONL response cache. Unreadable lines are skipped on load.
pub struct ResponseCache {
    path: Option<PathBuf>,
    state: Mutex<CacheState>,
    skipped: usize,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            state: Mutex::new(CacheState::default()),
            skipped: 0,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut entries = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key, e.response);
                    }
                    Err(err) => {
                        skipped += 1;
                        log::warn!("{}:{}: skipping unreadable cache entry: {err}", path.display(), i + 1);
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path: Some(path),
            state: Mutex::new(CacheState {
                entries,
                file: Some(file),
            }),
            skipped,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Lines skipped as unreadable when the cache was opened.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<ModelResponse> {
        self.state.lock().expect("cache lock").entries.get(key).cloned()
    }

    /// Stores `response` under `key`. Re-storing an existing key is a no-op.
    pub fn put(&self, key: &str, response: &ModelResponse) -> Result<()> {
        let mut state = self.state.lock().expect("cache lock");
        if state.entries.contains_key(key) {
            return Ok(());
        }
        if let Some(file) = state.file.as_mut() {
            let mut line = serde_json::to_string(&CacheEntry {
                key: key.to_string(),
                response: response.clone(),
            })
            .map_err(|e| Error::Validation(e.to_string()))?;
            line.push('\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
            file.flush().map_err(|e| Error::io(&path, e))?;
        }
        state.entries.insert(key.to_string(), response.clone());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// generation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from the base delay.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(30);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;
pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Fixed timestamp used for responses under reference backends.
pub fn epoch() -> DateTime<Utc> {
    Utc.timestamp_opt(0, 0).single().expect("valid epoch")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub response: ModelResponse,
    pub from_cache: bool,
    pub attempts: u32,
}

/// Calls model backends through a cache with retries.
pub struct Generator {
    pub cache: Arc<ResponseCache>,
    pub retry: RetryPolicy,
    pub sleep: Sleeper,
    pub clock: Clock,
}

impl Generator {
    pub fn new(cache: Arc<ResponseCache>) -> Self {
        Self {
            cache,
            retry: RetryPolicy::default(),
            sleep: Arc::new(std::thread::sleep),
            clock: Arc::new(Utc::now),
        }
    }

    pub fn generate(
        &self,
        backend: &dyn ModelBackend,
        prompt: &str,
        params: &GenerationParams,
        sample_id: &str,
        prompt_config: PromptConfigKind,
    ) -> Result<Generated> {
        params.validate()?;
        let key = cache_key(backend.model_id(), prompt, params);
        if let Some(mut response) = self.cache.get(&key) {
            response.sample_id = sample_id.to_string();
            response.prompt_config = prompt_config;
            return Ok(Generated {
                response,
                from_cache: true,
                attempts: 0,
            });
        }
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        let completion = loop {
            attempt += 1;
            match backend.complete(prompt, params) {
                Ok(c) => break c,
                Err(e) if e.is_retryable() && attempt < max => {
                    let delay = self.retry.delay(attempt);
                    log::warn!(
                        "{}: attempt {attempt}/{max} failed ({e}); retrying in {delay:?}",
                        backend.model_id()
                    );
                    (self.sleep)(delay);
                }
                Err(e) => {
                    log::error!("{}: attempt {attempt}/{max} failed: {e}", backend.model_id());
                    return Err(e);
                }
            }
        };
        if attempt > 1 {
            log::info!("{}: succeeded after {attempt} attempts", backend.model_id());
        }
        if completion.text.trim().is_empty() {
            return Err(Error::BackendProtocol {
                backend: backend.model_id().to_string(),
                reason: "empty completion".into(),
            });
        }
        let response = ModelResponse {
            sample_id: sample_id.to_string(),
            model_id: backend.model_id().to_string(),
            prompt_config,
            input_tokens: completion.input_tokens.unwrap_or_else(|| approx_tokens(prompt)),
            output_tokens: completion
                .output_tokens
                .unwrap_or_else(|| approx_tokens(&completion.text)),
            text: completion.text,
            created_at: (self.clock)(),
        };
        self.cache.put(&key, &response)?;
        Ok(Generated {
            response,
            from_cache: false,
            attempts: attempt,
        })
    }
}

// ---------------------------------------------------------------------------
// cost

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl ModelPrice {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.input_per_million) && ok(self.output_per_million) {
            Ok(())
        } else {
            Err(Error::Config("prices must be finite and nonnegative".into()))
        }
    }
}

/// USD per million tokens, by model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelPrice>);

impl Default for PriceTable {
    fn default() -> Self {
        let p = |i, o| ModelPrice {
            input_per_million: i,
            output_per_million: o,
        };
        Self(BTreeMap::from([
            ("gpt-4".to_string(), p(30.0, 60.0)),
            ("claude-sonnet-4.5".to_string(), p(3.0, 15.0)),
            ("gemini-2.5-flash".to_string(), p(0.0, 0.0)),
        ]))
    }
}

impl PriceTable {
    pub fn get(&self, model_id: &str) -> Option<&ModelPrice> {
        self.0.get(model_id)
    }

    pub fn validate(&self) -> Result<()> {
        self.0.values().try_for_each(ModelPrice::validate)
    }
}

pub fn cost(input_tokens: u64, output_tokens: u64, price: &ModelPrice) -> f64 {
    input_tokens as f64 * price.input_per_million / 1e6 + output_tokens as f64 * price.output_per_million / 1e6
}

/// `(total_cost / n_samples) * target_queries`.
pub fn scale_projection(total_cost: f64, n_samples: usize, target_queries: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InsufficientData("cost projection needs at least one sample".into()));
    }
    Ok(total_cost / n_samples as f64 * target_queries as f64)
}

pub const DEFAULT_SCALES: [u64; 4] = [1_000, 10_000, 100_000, 1_000_000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub model_id: String,
    /// Responses (queries) priced.
    pub samples: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Absent when the model has no price entry.
    pub total_usd: Option<f64>,
    /// `(queries, projected USD)` pairs.
    pub projections: Vec<(u64, f64)>,
}

/// Sums token usage per model and prices it; every response counts as one query.
pub fn summarize_costs(responses: &[ModelResponse], prices: &PriceTable, scales: &[u64]) -> Vec<CostSummary> {
    let mut per_model: BTreeMap<&str, (usize, u64, u64)> = BTreeMap::new();
    for r in responses {
        let e = per_model.entry(&r.model_id).or_default();
        e.0 += 1;
        e.1 += r.input_tokens;
        e.2 += r.output_tokens;
    }
    per_model
        .into_iter()
        .map(|(model, (samples, input, output))| {
            let total = prices.get(model).map(|p| cost(input, output, p));
            let projections = match total {
                Some(t) => scales
                    .iter()
                    .filter_map(|q| scale_projection(t, samples, *q).ok().map(|v| (*q, v)))
                    .collect(),
                None => Vec::new(),
            };
            CostSummary {
                model_id: model.to_string(),
                samples,
                input_tokens: input,
                output_tokens: output,
                total_usd: total,
                projections,
            }
        })
        .collect()
}

/// Words in the instruction part of a rendered prompt (everything but the target
/// question frame).
pub fn instruction_tokens(config: &PromptConfig) -> u64 {
    let mut n = approx_tokens(&config.instruction_text);
    for ex in &config.examples {
        n += approx_tokens(&frame(&config.question_frame, &ex.question)) + approx_tokens(&ex.answer);
    }
    if let Some(c) = &config.context {
        n += approx_tokens(c) + 1;
    }
    n + approx_tokens(&frame(&config.question_frame, ""))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{DiseaseCategory, QuestionType, Source};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn record(q: &str) -> QARecord {
        QARecord {
            id: "s1".into(),
            source: Source::Cdc,
            topic: "asthma".into(),
            disease_category: DiseaseCategory::Chronic,
            question_type: QuestionType::Definition,
            question: q.into(),
            reference_answer: "Asthma is a chronic disease of the airways. Symptoms include wheezing, coughing, and chest tightness.".into(),
        }
    }

    #[test]
    fn baseline_is_verbatim() {
        let r = record("What is asthma?");
        let c = PromptConfig::build(PromptConfigKind::ZeroShotBaseline, &PromptTemplates::default(), &r);
        let p = render_prompt(&c, &r).unwrap();
        assert_eq!(
            p,
            "You are a helpful medical information assistant. Answer the following health question based on reliable medical knowledge. Provide accurate, clear, and concise information suitable for a general audience. Question: What is asthma? Answer:"
        );
        assert!(p.contains("Question: What is asthma? Answer:"));
    }

    #[test]
    fn rag_and_few_shot_rendering() {
        let t = PromptTemplates::default();
        let r = record("What is asthma?");
        let mut c = PromptConfig::build(PromptConfigKind::RagContext, &t, &r);
        let p = render_prompt(&c, &r).unwrap();
        let ctx = p.find("chronic disease of the airways").unwrap();
        assert!(ctx < p.find("Question: What is asthma?").unwrap());
        c.context = Some("  ".into());
        assert!(matches!(render_prompt(&c, &r), Err(Error::MissingContext)));

        let c = PromptConfig::build(PromptConfigKind::FewShot, &t, &r);
        let p = render_prompt(&c, &r).unwrap();
        let a = p.find("What is hypertension?").unwrap();
        let b = p.find("How can influenza be prevented?").unwrap();
        let target = p.find("Question: What is asthma?").unwrap();
        assert!(a < b && b < target);
        let mut short = c.clone();
        short.examples.pop();
        assert!(matches!(
            render_prompt(&short, &r),
            Err(Error::FewShotExamples { expected: 2, got: 1 })
        ));

        let c = PromptConfig::build(PromptConfigKind::ZeroShotStrict, &t, &r);
        let p = render_prompt(&c, &r).unwrap();
        assert!(p.starts_with(BASELINE_PERSONA) && p.contains(DEFAULT_STRICT_BLOCK));
    }

    #[test]
    fn instruction_budgets_are_close_to_targets() {
        let t = PromptTemplates::default();
        let r = record("What is asthma?");
        let within = |kind, target: f64| {
            let n = instruction_tokens(&PromptConfig::build(kind, &t, &r)) as f64;
            assert!((n - target).abs() / target < 0.3, "{kind:?}: {n} vs {target}");
        };
        within(PromptConfigKind::ZeroShotBaseline, 40.0);
        within(PromptConfigKind::ZeroShotStrict, 75.0);
        within(PromptConfigKind::FewShot, 180.0);
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl ModelBackend for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _prompt: &str, _params: &GenerationParams) -> Result<Completion> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(Error::BackendUnavailable {
                    backend: "flaky".into(),
                    reason: "down".into(),
                })
            } else {
                Ok(Completion {
                    text: "A".into(),
                    input_tokens: Some(7),
                    output_tokens: Some(1),
                })
            }
        }
    }

    fn generator() -> (Generator, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s = slept.clone();
        let mut g = Generator::new(Arc::new(ResponseCache::in_memory()));
        g.sleep = Arc::new(move |d| s.lock().unwrap().push(d));
        g.clock = Arc::new(epoch);
        (g, slept)
    }

    #[test]
    fn retries_then_caches() {
        let (g, slept) = generator();
        let b = Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
        };
        let p = GenerationParams::default();
        let first = g.generate(&b, "prompt", &p, "s1", PromptConfigKind::ZeroShotBaseline).unwrap();
        assert_eq!((first.attempts, first.from_cache), (3, false));
        assert_eq!(first.response.text, "A");
        assert_eq!((first.response.input_tokens, first.response.output_tokens), (7, 1));
        assert_eq!(*slept.lock().unwrap(), vec![Duration::from_millis(500), Duration::from_millis(1000)]);
        let second = g.generate(&b, "prompt", &p, "s1", PromptConfigKind::ZeroShotBaseline).unwrap();
        assert!(second.from_cache);
        assert_eq!(second.response, first.response);
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let (g, _) = generator();
        let b = Flaky {
            failures: 10,
            calls: AtomicU32::new(0),
        };
        let r = g.generate(&b, "p", &GenerationParams::default(), "s", PromptConfigKind::ZeroShotBaseline);
        assert!(matches!(r, Err(Error::BackendUnavailable { .. })));
        assert_eq!(b.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn cache_file_survives_a_corrupt_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let resp = ModelResponse {
            sample_id: "s1".into(),
            model_id: "m".into(),
            prompt_config: PromptConfigKind::ZeroShotBaseline,
            text: "hello".into(),
            input_tokens: 3,
            output_tokens: 1,
            created_at: epoch(),
        };
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put("k1", &resp).unwrap();
        }
        let mut raw = fs::read_to_string(&path).unwrap();
        raw.push_str("{not json\n");
        fs::write(&path, raw).unwrap();
        {
            let c = ResponseCache::open(&path).unwrap();
            assert_eq!(c.skipped(), 1);
            c.put("k2", &resp).unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("k1").unwrap(), resp);
    }

    #[test]
    fn cache_key_depends_on_every_field() {
        let p = GenerationParams::default();
        let k = cache_key("m", "p", &p);
        assert_eq!(k, cache_key("m", "p", &p));
        assert_ne!(k, cache_key("m2", "p", &p));
        assert_ne!(k, cache_key("m", "p2", &p));
        assert_ne!(k, cache_key("m", "p", &GenerationParams { max_tokens: 301, ..p }));
        assert_eq!(k.len(), 64);
    }

    #[test]
    fn cost_examples() {
        let t = PriceTable::default();
        let claude = cost(48_098, 14_201, t.get("claude-sonnet-4.5").unwrap());
        assert!((claude - 0.357_309).abs() < 1e-9);
        assert_eq!(cost(123, 456, t.get("gemini-2.5-flash").unwrap()), 0.0);
        assert_eq!(cost(0, 0, t.get("gpt-4").unwrap()), 0.0);
        assert!((scale_projection(2.30, 48, 1_000_000).unwrap() - 47_916.666_666).abs() < 0.01);
        assert!((scale_projection(0.36, 48, 1_000_000).unwrap() - 7_500.0).abs() < 1e-6);
        assert!(scale_projection(1.0, 0, 10).is_err());
    }

    #[test]
    fn synthetic_model_is_deterministic_and_uses_context() {
        let r = record("What is asthma?");
        let m = SyntheticModel::new("mock", std::slice::from_ref(&r), SyntheticProfile::default());
        let t = PromptTemplates::default();
        let base = render_prompt(&PromptConfig::build(PromptConfigKind::ZeroShotBaseline, &t, &r), &r).unwrap();
        let a = m.complete(&base, &GenerationParams::default()).unwrap();
        let b = m.complete(&base, &GenerationParams::default()).unwrap();
        assert_eq!(a, b);
        let rag = render_prompt(&PromptConfig::build(PromptConfigKind::RagContext, &t, &r), &r).unwrap();
        let c = m.complete(&rag, &GenerationParams::default()).unwrap();
        assert_eq!(c.text, r.reference_answer);
    }
}
