//! End-to-end commands: evaluate, compare, sensitivity, sweep, report and cost.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, ToolkitConfig};
use crate::datamodel::{
    self, ComponentScores, FailureFlag, ModelResponse, PromptConfigKind, QARecord, ResultCheck,
    ResultFormat, VBScoreResult, COMPONENT_NAMES,
};
use crate::entity::{
    entity_prf, extract_entities, match_entities, AbbreviationTable, EntityBackend,
    HttpEntityBackend, LexiconBackend, DEFAULT_ABBREVIATIONS,
};
use crate::error::{Error, Result};
use crate::factual::{factual_consistency, HttpNliBackend, NliBackend, RuleNliBackend};
use crate::harness::{
    self, render_prompt, CostSummary, Generator, HttpModelBackend, ModelBackend, PromptConfig,
    SyntheticModel, SyntheticProfile,
};
use crate::http::HttpClient;
use crate::scoring::{classify_failures, compose_vb, rank_models, Ranking, WeightScheme};
use crate::semantic::{semantic_similarity, EmbeddingBackend, HashingTfBackend, HttpEmbeddingBackend};
use crate::stats::{
    self, describe, effect_size, failure_overlap, gap_analysis, group_by_stratum, one_way_anova,
    paired_t, stratified_compare, two_sample_t, DescriptiveSummary, EffectSize, FailureOverlap,
    GapReport, StratifiedReport, StratumKey, TestResult,
};
use crate::structure::structured_overlap_texts;

// ---------------------------------------------------------------------------
// backends

/// Scoring backends for the three model-dependent components.
#[derive(Clone)]
pub struct Backends {
    pub entity: Arc<dyn EntityBackend>,
    pub embedding: Arc<dyn EmbeddingBackend<f64>>,
    pub nli: Arc<dyn NliBackend<f64>>,
}

pub const BACKEND_NAMES: [&str; 3] = ["entity", "embedding", "nli"];

impl Backends {
    /// Deterministic offline backends: lexicon extraction, hashed term-frequency
    /// embeddings and rule-based NLI.
    pub fn reference(cfg: &ToolkitConfig) -> Result<Self> {
        let lexicon = match &cfg.entity.lexicon {
            Some(p) => LexiconBackend::load(p)?,
            None => LexiconBackend::default_lexicon(),
        };
        Ok(Self {
            entity: Arc::new(lexicon),
            embedding: Arc::new(HashingTfBackend::default()),
            nli: Arc::new(RuleNliBackend),
        })
    }

    /// Remote backends from the config, with `overrides` (`name -> url`) taking
    /// precedence. Components without an endpoint use the reference backend.
    pub fn from_config(cfg: &ToolkitConfig, overrides: &BTreeMap<String, String>) -> Result<Self> {
        for name in overrides.keys() {
            if !BACKEND_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown backend `{name}` (expected one of {})",
                    BACKEND_NAMES.join(", ")
                )));
            }
        }
        let mut out = Self::reference(cfg)?;
        let timeout = Duration::from_secs(cfg.backends.timeout_secs.unwrap_or(60));
        let url = |name: &str, configured: &Option<String>| {
            overrides.get(name).cloned().or_else(|| configured.clone())
        };
        if let Some(u) = url("entity", &cfg.backends.entity) {
            out.entity = Arc::new(HttpEntityBackend::new(HttpClient::with_timeout("entity", u, timeout)));
        }
        if let Some(u) = url("embedding", &cfg.backends.embedding) {
            out.embedding = Arc::new(HttpEmbeddingBackend::new(HttpClient::with_timeout("embedding", u, timeout)));
        }
        if let Some(u) = url("nli", &cfg.backends.nli) {
            out.nli = Arc::new(HttpNliBackend::new(HttpClient::with_timeout("nli", u, timeout)));
        }
        Ok(out)
    }
}

pub fn abbreviation_table(cfg: &ToolkitConfig) -> Result<AbbreviationTable> {
    match &cfg.entity.abbreviations {
        None => Ok(AbbreviationTable::default_table()),
        Some(p) => {
            let extra = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            AbbreviationTable::parse(&format!("{DEFAULT_ABBREVIATIONS}\n{extra}"))
        }
    }
}

/// Profiles of the stand-in models used under reference backends.
pub fn default_synthetic_models() -> Vec<(String, SyntheticProfile)> {
    let p = |keep, negate| SyntheticProfile {
        keep,
        negate,
        ..SyntheticProfile::default()
    };
    vec![
        ("claude-sonnet-4.5".into(), p(0.45, 0.30)),
        ("gemini-2.5-flash".into(), p(0.60, 0.05)),
        ("gpt-4".into(), p(0.50, 0.15)),
    ]
}

/// Builds model backends from the config. With `reference` every model becomes a
/// synthetic stand-in (the shipped three when none are configured).
pub fn build_models(cfg: &ToolkitConfig, dataset: &[QARecord], reference: bool) -> Result<Vec<Arc<dyn ModelBackend>>> {
    let mut out: Vec<Arc<dyn ModelBackend>> = Vec::new();
    if cfg.models.is_empty() {
        if !reference {
            return Err(Error::Config("no models configured".into()));
        }
        for (id, profile) in default_synthetic_models() {
            out.push(Arc::new(SyntheticModel::new(id, dataset, profile)));
        }
        return Ok(out);
    }
    let timeout = Duration::from_secs(cfg.backends.timeout_secs.unwrap_or(60));
    for m in &cfg.models {
        if reference || m.kind == ModelKind::Synthetic {
            out.push(Arc::new(SyntheticModel::new(m.id.clone(), dataset, m.profile.clone())));
            continue;
        }
        let url = m.url.clone().ok_or_else(|| Error::Config(format!("model `{}` needs a url", m.id)))?;
        let client = HttpClient::with_timeout(m.id.clone(), url, timeout);
        let backend = match &m.api_key_env {
            Some(var) => HttpModelBackend::with_credentials(m.id.clone(), client, &m.auth_header, &m.auth_prefix, var)?,
            None => HttpModelBackend::new(m.id.clone(), client),
        };
        out.push(Arc::new(backend));
    }
    Ok(out)
}

fn pool(parallel: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

// ---------------------------------------------------------------------------
// scoring

/// Per-component outcome for one sample; a component is `Err` when its backend failed.
#[derive(Debug)]
pub struct ComponentOutcome {
    pub entity_f1: Result<f64>,
    pub semantic_similarity: Result<f64>,
    pub factual_consistency: Result<f64>,
    pub structured_overlap: Result<f64>,
}

impl ComponentOutcome {
    fn parts(&self) -> [(&'static str, &Result<f64>); 4] {
        [
            (COMPONENT_NAMES[0], &self.entity_f1),
            (COMPONENT_NAMES[1], &self.semantic_similarity),
            (COMPONENT_NAMES[2], &self.factual_consistency),
            (COMPONENT_NAMES[3], &self.structured_overlap),
        ]
    }

    pub fn complete(&self) -> Option<ComponentScores<f64>> {
        Some(ComponentScores::new(
            *self.entity_f1.as_ref().ok()?,
            *self.semantic_similarity.as_ref().ok()?,
            *self.factual_consistency.as_ref().ok()?,
            *self.structured_overlap.as_ref().ok()?,
        ))
    }
}

/// Scores generated answers against references with fixed backends and settings.
pub struct Scorer {
    pub backends: Backends,
    pub table: AbbreviationTable,
    pub scheme: WeightScheme<f64>,
    pub config: ToolkitConfig,
}

impl Scorer {
    pub fn new(config: &ToolkitConfig, backends: Backends, scheme: WeightScheme<f64>) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            table: abbreviation_table(config)?,
            backends,
            scheme,
            config: config.clone(),
        })
    }

    pub fn entity_f1(&self, reference: &str, generated: &str) -> Result<f64> {
        let r = extract_entities(reference, self.backends.entity.as_ref(), &self.table)?;
        let g = extract_entities(generated, self.backends.entity.as_ref(), &self.table)?;
        let report = match_entities(&r, &g, self.config.entity.min_token_len);
        Ok(entity_prf::<f64>(&report).f1)
    }

    pub fn components(&self, reference: &str, generated: &str) -> ComponentOutcome {
        ComponentOutcome {
            entity_f1: self.entity_f1(reference, generated),
            semantic_similarity: semantic_similarity(reference, generated, self.backends.embedding.as_ref()),
            factual_consistency: factual_consistency(
                reference,
                generated,
                self.backends.nli.as_ref(),
                &self.config.factual.mapping,
                self.config.factual.mode,
            ),
            structured_overlap: structured_overlap_texts(
                reference,
                generated,
                &self.table,
                &self.config.structure,
                self.config.entity.min_token_len,
            ),
        }
    }

    /// Composes complete components into a result row.
    pub fn result(&self, response: &ModelResponse, components: ComponentScores<f64>) -> VBScoreResult {
        let vb = compose_vb(&components, &self.scheme);
        VBScoreResult {
            sample_id: response.sample_id.clone(),
            model_id: response.model_id.clone(),
            prompt_config: response.prompt_config,
            components,
            vb_score: vb,
            weight_scheme: self.scheme.name.clone(),
            failure_flags: classify_failures(&components, vb, &self.config.thresholds),
        }
    }
}

/// A response whose VB-Score could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSample {
    pub sample_id: String,
    pub model_id: String,
    pub prompt_config: PromptConfigKind,
    /// Components that were computed.
    pub partial: BTreeMap<String, f64>,
    /// Error message per failed component.
    pub errors: BTreeMap<String, String>,
    /// Whether a backend (rather than the input) caused the failure.
    pub backend_failure: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub results: Vec<VBScoreResult>,
    pub failures: Vec<FailedSample>,
}

fn check_unique_responses(responses: &[ModelResponse]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in responses {
        if !seen.insert((&r.sample_id, &r.model_id, r.prompt_config)) {
            return Err(Error::Validation(format!(
                "duplicate response for {} / {} / {}",
                r.sample_id, r.model_id, r.prompt_config
            )));
        }
    }
    Ok(())
}

/// Scores every response. Output order is model id, prompt configuration, then
/// dataset order, independent of the input order and of parallelism.
pub fn evaluate(
    scorer: &Scorer,
    dataset: &[QARecord],
    responses: &[ModelResponse],
    parallel: usize,
) -> Result<Evaluation> {
    check_unique_responses(responses)?;
    let index: HashMap<&str, (usize, &QARecord)> =
        dataset.iter().enumerate().map(|(i, r)| (r.id.as_str(), (i, r))).collect();
    let mut ordered: Vec<(&ModelResponse, usize, &QARecord)> = responses
        .iter()
        .map(|r| {
            index
                .get(r.sample_id.as_str())
                .map(|(i, rec)| (r, *i, *rec))
                .ok_or_else(|| Error::UnknownSampleId {
                    id: r.sample_id.clone(),
                    line: 0,
                })
        })
        .collect::<Result<_>>()?;
    ordered.sort_by(|a, b| {
        (&a.0.model_id, a.0.prompt_config, a.1).cmp(&(&b.0.model_id, b.0.prompt_config, b.1))
    });
    let outcomes: Vec<ComponentOutcome> = pool(parallel)?.install(|| {
        ordered
            .par_iter()
            .map(|(resp, _, rec)| scorer.components(&rec.reference_answer, &resp.text))
            .collect()
    });
    let mut eval = Evaluation::default();
    for ((resp, _, _), outcome) in ordered.iter().zip(outcomes) {
        match outcome.complete() {
            Some(c) => eval.results.push(scorer.result(resp, c)),
            None => {
                let mut partial = BTreeMap::new();
                let mut errors = BTreeMap::new();
                let mut backend_failure = false;
                for (name, r) in outcome.parts() {
                    match r {
                        Ok(v) => {
                            partial.insert(name.to_string(), *v);
                        }
                        Err(e) => {
                            backend_failure |= e.is_backend();
                            errors.insert(name.to_string(), e.to_string());
                        }
                    }
                }
                log::warn!(
                    "{}/{}/{}: not scored ({})",
                    resp.sample_id,
                    resp.model_id,
                    resp.prompt_config,
                    errors.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("; ")
                );
                eval.failures.push(FailedSample {
                    sample_id: resp.sample_id.clone(),
                    model_id: resp.model_id.clone(),
                    prompt_config: resp.prompt_config,
                    partial,
                    errors,
                    backend_failure,
                });
            }
        }
    }
    Ok(eval)
}

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const FAILURE_MANIFEST: &str = "failure_manifest.json";

fn to_json<S: Serialize + ?Sized>(value: &S) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    b.push(b'\n');
    Ok(b)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes results in both formats plus the failure manifest (always written, possibly
/// empty).
pub fn write_evaluation(eval: &Evaluation, out_dir: &Path, cfg: &ToolkitConfig) -> Result<()> {
    ensure_dir(out_dir)?;
    let schemes = cfg.all_schemes();
    let check = ResultCheck {
        schemes: &schemes,
        thresholds: cfg.thresholds,
    };
    datamodel::write_results(&eval.results, out_dir.join(RESULTS_CSV), ResultFormat::Rows, &check)?;
    datamodel::write_results(&eval.results, out_dir.join(RESULTS_JSON), ResultFormat::Json, &check)?;
    datamodel::write_atomic(&out_dir.join(FAILURE_MANIFEST), &to_json(&eval.failures)?)
}

/// Per-model (or overall) component summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub group: String,
    pub n: usize,
    pub components: BTreeMap<String, DescriptiveSummary<f64>>,
    pub vb_score: DescriptiveSummary<f64>,
    /// Samples carrying each flag.
    pub flag_counts: BTreeMap<String, usize>,
}

pub fn summarize(group: &str, results: &[&VBScoreResult]) -> Result<ComponentSummary> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut components = BTreeMap::new();
    for (i, name) in COMPONENT_NAMES.iter().enumerate() {
        let values: Vec<f64> = results.iter().map(|r| r.components.as_array()[i]).collect();
        components.insert(name.to_string(), describe(&values)?);
    }
    let vb: Vec<f64> = results.iter().map(|r| r.vb_score).collect();
    let flag_counts = FailureFlag::ALL
        .iter()
        .map(|f| (f.as_str().to_string(), results.iter().filter(|r| r.has(*f)).count()))
        .collect();
    Ok(ComponentSummary {
        group: group.to_string(),
        n: results.len(),
        components,
        vb_score: describe(&vb)?,
        flag_counts,
    })
}

fn by_model(results: &[VBScoreResult]) -> BTreeMap<&str, Vec<&VBScoreResult>> {
    let mut map: BTreeMap<&str, Vec<&VBScoreResult>> = BTreeMap::new();
    for r in results {
        map.entry(&r.model_id).or_default().push(r);
    }
    map
}

/// Summaries per model followed by an `all` row.
pub fn summaries(results: &[VBScoreResult]) -> Result<Vec<ComponentSummary>> {
    let mut out = Vec::new();
    for (model, rs) in by_model(results) {
        out.push(summarize(model, &rs)?);
    }
    let all: Vec<&VBScoreResult> = results.iter().collect();
    out.push(summarize("all", &all)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: String,
    pub b: String,
    pub test: TestResult<f64>,
    pub effect: Option<EffectSize<f64>>,
    /// Why the effect size is absent.
    pub effect_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedEntry {
    pub key: StratumKey,
    pub group: String,
    pub report: Option<StratifiedReport<f64>>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub prompt_config: PromptConfigKind,
    pub scheme: String,
    pub models: Vec<String>,
    pub samples: usize,
    pub summaries: Vec<ComponentSummary>,
    pub anova: TestResult<f64>,
    pub pairwise: Vec<PairwiseComparison>,
    pub ranking: Ranking<f64>,
    /// Per model, then `all`.
    pub gaps: Vec<(String, GapReport<f64>)>,
    pub failure_overlap: Vec<(String, FailureOverlap<f64>)>,
    pub stratified: Vec<StratifiedEntry>,
}

/// Picks the prompt configuration to analyse: the requested one, the only one present,
/// or the baseline.
pub fn select_config(results: &[VBScoreResult], requested: Option<PromptConfigKind>) -> Result<PromptConfigKind> {
    let present: BTreeSet<PromptConfigKind> = results.iter().map(|r| r.prompt_config).collect();
    let pick = match requested {
        Some(k) => k,
        None if present.len() == 1 => *present.iter().next().expect("one config"),
        None => PromptConfigKind::ZeroShotBaseline,
    };
    if !present.contains(&pick) {
        return Err(Error::NoData(format!("no results for prompt configuration {pick}")));
    }
    Ok(pick)
}

fn aligned_scores<'a>(
    groups: &BTreeMap<&str, Vec<&'a VBScoreResult>>,
) -> Result<Vec<(String, Vec<&'a VBScoreResult>)>> {
    let mut reference: Option<(&str, BTreeSet<&str>)> = None;
    let mut out = Vec::new();
    for (model, rs) in groups {
        let mut rs = rs.clone();
        rs.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let ids: BTreeSet<&str> = rs.iter().map(|r| r.sample_id.as_str()).collect();
        match &reference {
            None => reference = Some((model, ids)),
            Some((first, ref_ids)) if *ref_ids != ids => {
                let only_first = ref_ids.difference(&ids).count();
                let only_this = ids.difference(ref_ids).count();
                return Err(Error::MismatchedSampleSets(format!(
                    "`{first}` has {only_first} samples `{model}` lacks; `{model}` has {only_this} samples `{first}` lacks"
                )));
            }
            _ => {}
        }
        out.push((model.to_string(), rs));
    }
    Ok(out)
}

pub fn compare(
    results: &[VBScoreResult],
    dataset: &[QARecord],
    cfg: &ToolkitConfig,
    requested: Option<PromptConfigKind>,
) -> Result<ComparisonReport> {
    if results.is_empty() {
        return Err(Error::NoData("no results to compare".into()));
    }
    let config = select_config(results, requested)?;
    let selected: Vec<VBScoreResult> = results.iter().filter(|r| r.prompt_config == config).cloned().collect();
    let groups = by_model(&selected);
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "comparison needs at least 2 models, got {}",
            groups.len()
        )));
    }
    let aligned = aligned_scores(&groups)?;
    let alpha = cfg.stats.alpha;
    let vb: Vec<Vec<f64>> = aligned.iter().map(|(_, rs)| rs.iter().map(|r| r.vb_score).collect()).collect();
    let anova = one_way_anova(&vb, alpha)?;
    let m = aligned.len() * (aligned.len() - 1) / 2;
    let mut pairwise = Vec::new();
    for i in 0..aligned.len() {
        for j in i + 1..aligned.len() {
            let test = two_sample_t(&vb[i], &vb[j], alpha, m, cfg.stats.t_variant)?;
            let (effect, effect_note) = match effect_size(&vb[i], &vb[j], cfg.stats.band_convention) {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            pairwise.push(PairwiseComparison {
                a: aligned[i].0.clone(),
                b: aligned[j].0.clone(),
                test,
                effect,
                effect_note,
            });
        }
    }

    let means: BTreeMap<String, ComponentScores<f64>> = aligned
        .iter()
        .map(|(m, rs)| {
            let comps: Vec<ComponentScores<f64>> = rs.iter().map(|r| r.components).collect();
            (m.clone(), ComponentScores::mean_of(&comps).expect("nonempty"))
        })
        .collect();
    let scheme = cfg.resolve_scheme(&cfg.scheme)?;
    let ranking = rank_models(&means, std::slice::from_ref(&scheme)).remove(0);

    let mut gaps = Vec::new();
    let mut overlaps = Vec::new();
    let mut stratified = Vec::new();
    let mut groups_all: Vec<(String, Vec<VBScoreResult>)> = aligned
        .iter()
        .map(|(m, rs)| (m.clone(), rs.iter().map(|r| (*r).clone()).collect()))
        .collect();
    groups_all.push(("all".into(), selected.clone()));
    for (name, rs) in &groups_all {
        let sem: Vec<f64> = rs.iter().map(|r| r.components.semantic_similarity).collect();
        let ent: Vec<f64> = rs.iter().map(|r| r.components.entity_f1).collect();
        gaps.push((name.clone(), gap_analysis(&sem, &ent)?));
        let comps: Vec<ComponentScores<f64>> = rs.iter().map(|r| r.components).collect();
        overlaps.push((name.clone(), failure_overlap(&comps, &cfg.thresholds, cfg.stats.high_semantic)?));
        for key in StratumKey::ALL {
            let strata = group_by_stratum(rs, dataset, key);
            let (report, note) =
                match stratified_compare(&strata, alpha, cfg.stats.t_variant, cfg.stats.band_convention) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
            stratified.push(StratifiedEntry {
                key,
                group: name.clone(),
                report,
                note,
            });
        }
    }
    Ok(ComparisonReport {
        prompt_config: config,
        scheme: scheme.name.clone(),
        models: aligned.iter().map(|(m, _)| m.clone()).collect(),
        samples: aligned[0].1.len(),
        summaries: summaries(&selected)?,
        anova,
        pairwise,
        ranking,
        gaps,
        failure_overlap: overlaps,
        stratified,
    })
}

// ---------------------------------------------------------------------------
// sensitivity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub models: Vec<String>,
    pub schemes: Vec<String>,
    /// `matrix[s][m]`: composed mean score of model `m` under scheme `s`.
    pub matrix: Vec<Vec<f64>>,
    pub rankings: Vec<Ranking<f64>>,
    pub stable: bool,
    /// Schemes whose order differs from the first scheme's.
    pub flips: Vec<String>,
}

/// Ranks models under each scheme; `schemes[0]` is the reference order.
pub fn sensitivity(
    model_means: &BTreeMap<String, ComponentScores<f64>>,
    schemes: &[WeightScheme<f64>],
) -> Result<SensitivityReport> {
    if schemes.is_empty() {
        return Err(Error::Config("no weight schemes".into()));
    }
    if model_means.is_empty() {
        return Err(Error::NoData("no model means".into()));
    }
    for s in schemes {
        s.validate()?;
    }
    let models: Vec<String> = model_means.keys().cloned().collect();
    let matrix = schemes
        .iter()
        .map(|s| model_means.values().map(|c| compose_vb(c, s)).collect())
        .collect();
    let rankings = rank_models(model_means, schemes);
    let base = rankings[0].model_order();
    let flips: Vec<String> = rankings
        .iter()
        .filter(|r| r.model_order() != base)
        .map(|r| r.scheme.clone())
        .collect();
    Ok(SensitivityReport {
        models,
        schemes: schemes.iter().map(|s| s.name.clone()).collect(),
        matrix,
        stable: flips.is_empty(),
        flips,
        rankings,
    })
}

/// Component means per model for one prompt configuration.
pub fn model_means(results: &[VBScoreResult], config: PromptConfigKind) -> BTreeMap<String, ComponentScores<f64>> {
    let mut groups: BTreeMap<String, Vec<ComponentScores<f64>>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.prompt_config == config) {
        groups.entry(r.model_id.clone()).or_default().push(r.components);
    }
    groups
        .into_iter()
        .map(|(m, c)| (m, ComponentScores::mean_of(&c).expect("nonempty group")))
        .collect()
}

/// The configured scheme first, then every other known scheme by name.
pub fn ordered_schemes(cfg: &ToolkitConfig) -> Result<Vec<WeightScheme<f64>>> {
    let first = cfg.resolve_scheme(&cfg.scheme)?;
    let mut out = vec![first.clone()];
    out.extend(cfg.all_schemes().into_iter().filter(|s| s.name != first.name));
    Ok(out)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub sample_id: String,
    pub model_id: String,
    pub prompt_config: PromptConfigKind,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub responses: Vec<ModelResponse>,
    pub cache_hits: usize,
    pub backend_calls: usize,
    pub failures: Vec<CellFailure>,
}

/// Generates a response for every (sample, prompt configuration, model) cell.
pub fn run_sweep(
    dataset: &[QARecord],
    models: &[Arc<dyn ModelBackend>],
    configs: &[PromptConfigKind],
    cfg: &ToolkitConfig,
    generator: &Generator,
    parallel: usize,
) -> Result<SweepRun> {
    let mut cells = Vec::new();
    for model in models {
        for kind in configs {
            for rec in dataset {
                cells.push((model.clone(), *kind, rec));
            }
        }
    }
    let hits = AtomicUsize::new(0);
    let calls = AtomicUsize::new(0);
    let outcomes: Vec<std::result::Result<ModelResponse, CellFailure>> = pool(parallel)?.install(|| {
        cells
            .par_iter()
            .map(|(model, kind, rec)| {
                let fail = |e: Error| CellFailure {
                    sample_id: rec.id.clone(),
                    model_id: model.model_id().to_string(),
                    prompt_config: *kind,
                    error: e.to_string(),
                };
                let prompt = render_prompt(&PromptConfig::build(*kind, &cfg.prompts, rec), rec).map_err(fail)?;
                let g = generator
                    .generate(model.as_ref(), &prompt, &cfg.harness.params, &rec.id, *kind)
                    .map_err(fail)?;
                if g.from_cache {
                    hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    calls.fetch_add(g.attempts as usize, Ordering::Relaxed);
                }
                Ok(g.response)
            })
            .collect()
    });
    let mut run = SweepRun {
        cache_hits: hits.into_inner(),
        backend_calls: calls.into_inner(),
        ..Default::default()
    };
    for o in outcomes {
        match o {
            Ok(r) => run.responses.push(r),
            Err(f) => run.failures.push(f),
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDelta {
    pub model_id: String,
    pub prompt_config: PromptConfigKind,
    pub n: usize,
    pub baseline_mean: f64,
    pub config_mean: f64,
    /// `config_mean - baseline_mean` on the VB-Score.
    pub delta: f64,
    pub component_deltas: BTreeMap<String, f64>,
    pub test: Option<TestResult<f64>>,
    pub note: Option<String>,
}

/// Per model, paired comparison of every non-baseline configuration against the
/// baseline over shared samples, Bonferroni-corrected over the non-baseline configs.
pub fn prompt_sensitivity(results: &[VBScoreResult], alpha: f64) -> Result<Vec<PromptDelta>> {
    let mut cells: BTreeMap<(&str, PromptConfigKind), BTreeMap<&str, &VBScoreResult>> = BTreeMap::new();
    for r in results {
        cells
            .entry((&r.model_id, r.prompt_config))
            .or_default()
            .insert(&r.sample_id, r);
    }
    let models: BTreeSet<&str> = results.iter().map(|r| r.model_id.as_str()).collect();
    let others: Vec<PromptConfigKind> = PromptConfigKind::ALL
        .iter()
        .copied()
        .filter(|k| *k != PromptConfigKind::ZeroShotBaseline)
        .filter(|k| results.iter().any(|r| r.prompt_config == *k))
        .collect();
    let m = others.len();
    let mut out = Vec::new();
    for model in models {
        let Some(base) = cells.get(&(model, PromptConfigKind::ZeroShotBaseline)) else {
            continue;
        };
        for kind in &others {
            let Some(cur) = cells.get(&(model, *kind)) else {
                continue;
            };
            let shared: Vec<&str> = base.keys().filter(|k| cur.contains_key(*k)).copied().collect();
            if shared.is_empty() {
                continue;
            }
            let b: Vec<f64> = shared.iter().map(|s| base[s].vb_score).collect();
            let c: Vec<f64> = shared.iter().map(|s| cur[s].vb_score).collect();
            let mut component_deltas = BTreeMap::new();
            for (i, name) in COMPONENT_NAMES.iter().enumerate() {
                let db: Vec<f64> = shared.iter().map(|s| base[s].components.as_array()[i]).collect();
                let dc: Vec<f64> = shared.iter().map(|s| cur[s].components.as_array()[i]).collect();
                component_deltas.insert(name.to_string(), stats::mean(&dc)? - stats::mean(&db)?);
            }
            let (test, note) = match paired_t(&c, &b, alpha, m) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let (bm, cm) = (stats::mean(&b)?, stats::mean(&c)?);
            out.push(PromptDelta {
                model_id: model.to_string(),
                prompt_config: *kind,
                n: shared.len(),
                baseline_mean: bm,
                config_mean: cm,
                delta: cm - bm,
                component_deltas,
                test,
                note,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// cost

pub fn cost_report(responses: &[ModelResponse], cfg: &ToolkitConfig) -> Vec<CostSummary> {
    harness::summarize_costs(responses, &cfg.prices, &cfg.report.scales)
}

// ---------------------------------------------------------------------------
// report

pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";
pub const CHART_COMPONENTS: &str = "chart_components.csv";
pub const CHART_GAP: &str = "chart_gap.csv";
pub const CHART_HEATMAP: &str = "chart_heatmap.csv";
pub const CHART_COST: &str = "chart_cost.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub comparison: Option<ComparisonReport>,
    /// Why the comparison is absent.
    pub comparison_note: Option<String>,
    pub summaries: Vec<ComponentSummary>,
    pub sensitivity: SensitivityReport,
    pub prompt_deltas: Vec<PromptDelta>,
    pub costs: Vec<CostSummary>,
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Validation(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Validation(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn build_report(
    results: &[VBScoreResult],
    dataset: &[QARecord],
    responses: &[ModelResponse],
    cfg: &ToolkitConfig,
) -> Result<FullReport> {
    if results.is_empty() {
        return Err(Error::NoData("results are empty".into()));
    }
    let config = select_config(results, None)?;
    let (comparison, comparison_note) = match compare(results, dataset, cfg, Some(config)) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let selected: Vec<VBScoreResult> = results.iter().filter(|r| r.prompt_config == config).cloned().collect();
    Ok(FullReport {
        comparison,
        comparison_note,
        summaries: summaries(&selected)?,
        sensitivity: sensitivity(&model_means(results, config), &ordered_schemes(cfg)?)?,
        prompt_deltas: prompt_sensitivity(results, cfg.stats.alpha)?,
        costs: cost_report(responses, cfg),
    })
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

/// Markdown narrative of a report.
pub fn render_markdown(report: &FullReport) -> String {
    let mut s = String::new();
    let mut line = |l: String| {
        s.push_str(&l);
        s.push('\n');
    };
    line("# VB-Score evaluation report".into());
    line(String::new());
    line("## Component summary".into());
    line(String::new());
    line("| group | n | entity F1 | semantic | factual | structured | VB-Score |".into());
    line("|---|---|---|---|---|---|---|".into());
    for g in &report.summaries {
        let c = |k: &str| fmt4(g.components[k].mean);
        line(format!(
            "| {} | {} | {} | {} | {} | {} | {} |",
            g.group,
            g.n,
            c("entity_f1"),
            c("semantic_similarity"),
            c("factual_consistency"),
            c("structured_overlap"),
            fmt4(g.vb_score.mean)
        ));
    }
    line(String::new());
    line("## Failure flags".into());
    line(String::new());
    line(format!(
        "| group | {} |",
        FailureFlag::ALL.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(" | ")
    ));
    line(format!("|---|{}", "---|".repeat(FailureFlag::ALL.len())));
    for g in &report.summaries {
        line(format!(
            "| {} | {} |",
            g.group,
            FailureFlag::ALL
                .iter()
                .map(|f| format!("{:.1}%", 100.0 * g.flag_counts[f.as_str()] as f64 / g.n as f64))
                .collect::<Vec<_>>()
                .join(" | ")
        ));
    }
    line(String::new());
    match (&report.comparison, &report.comparison_note) {
        (Some(c), _) => {
            line(format!("## Model comparison ({}, scheme `{}`)", c.prompt_config, c.scheme));
            line(String::new());
            line(format!(
                "One-way ANOVA: F({}, {}) = {}, p = {}{}",
                c.anova.df[0],
                c.anova.df[1],
                fmt4(c.anova.statistic),
                fmt4(c.anova.p_value),
                if c.anova.significant { " (significant)" } else { "" }
            ));
            line(String::new());
            line("| pair | t | df | p | alpha | significant | d | band |".into());
            line("|---|---|---|---|---|---|---|---|".into());
            for p in &c.pairwise {
                line(format!(
                    "| {} vs {} | {} | {} | {} | {} | {} | {} | {} |",
                    p.a,
                    p.b,
                    fmt4(p.test.statistic),
                    fmt4(p.test.df[0]),
                    fmt4(p.test.p_value),
                    fmt4(p.test.applicable_alpha()),
                    p.test.significant,
                    p.effect.map(|e| fmt4(e.d)).unwrap_or_else(|| "n/a".into()),
                    p.effect.map(|e| e.band.to_string()).unwrap_or_else(|| "n/a".into()),
                ));
            }
            line(String::new());
            line(format!(
                "Ranking: {}",
                c.ranking
                    .order
                    .iter()
                    .map(|m| format!("{} ({})", m.model_id, fmt4(m.score)))
                    .collect::<Vec<_>>()
                    .join(" > ")
            ));
            line(String::new());
            line("### Semantic-entity gap".into());
            line(String::new());
            line("| group | semantic | entity | gap (pp) | ratio |".into());
            line("|---|---|---|---|---|".into());
            for (g, r) in &c.gaps {
                line(format!(
                    "| {} | {} | {} | {:.1} | {} |",
                    g,
                    fmt4(r.semantic_mean),
                    fmt4(r.entity_mean),
                    r.gap_pp,
                    r.ratio.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into())
                ));
            }
            line(String::new());
            line("### Failure overlap".into());
            line(String::new());
            line("| group | high semantic, low entity | high semantic, low factual |".into());
            line("|---|---|---|".into());
            for (g, o) in &c.failure_overlap {
                line(format!(
                    "| {} | {:.1}% | {:.1}% |",
                    g,
                    100.0 * o.high_semantic_low_entity_fraction,
                    100.0 * o.high_semantic_low_factual_fraction
                ));
            }
            line(String::new());
            line("### Stratified comparisons".into());
            line(String::new());
            line("| key | group | compared | gap (%) | p | d |".into());
            line("|---|---|---|---|---|---|".into());
            for e in &c.stratified {
                match &e.report {
                    Some(r) => line(format!(
                        "| {} | {} | {} vs {} | {} | {} | {} |",
                        e.key.as_str(),
                        e.group,
                        r.compared.0,
                        r.compared.1,
                        r.relative_gap_pct.map(|g| format!("{g:+.1}")).unwrap_or_else(|| "n/a".into()),
                        r.test.as_ref().map(|t| fmt4(t.p_value)).unwrap_or_else(|| "n/a".into()),
                        r.effect.map(|x| format!("{} ({})", fmt4(x.d), x.band)).unwrap_or_else(|| "n/a".into()),
                    )),
                    None => line(format!(
                        "| {} | {} | {} | | | |",
                        e.key.as_str(),
                        e.group,
                        e.note.clone().unwrap_or_default()
                    )),
                }
            }
            line(String::new());
        }
        (None, note) => {
            line("## Model comparison".into());
            line(String::new());
            line(format!("Not available: {}", note.clone().unwrap_or_default()));
            line(String::new());
        }
    }
    let sens = &report.sensitivity;
    line("## Weight sensitivity".into());
    line(String::new());
    line(format!("| scheme | {} | order |", sens.models.join(" | ")));
    line(format!("|---|{}---|", "---|".repeat(sens.models.len())));
    for (i, scheme) in sens.schemes.iter().enumerate() {
        line(format!(
            "| {} | {} | {} |",
            scheme,
            sens.matrix[i].iter().map(|v| fmt4(*v)).collect::<Vec<_>>().join(" | "),
            sens.rankings[i].model_order().join(" > ")
        ));
    }
    line(String::new());
    line(if sens.stable {
        "Verdict: stable (identical order under every scheme).".to_string()
    } else {
        format!("Verdict: unstable (order changes under {}).", sens.flips.join(", "))
    });
    line(String::new());
    if !report.prompt_deltas.is_empty() {
        line("## Prompt sensitivity".into());
        line(String::new());
        line("| model | config | n | baseline | config | delta | p | alpha | significant |".into());
        line("|---|---|---|---|---|---|---|---|---|".into());
        for d in &report.prompt_deltas {
            line(format!(
                "| {} | {} | {} | {} | {} | {:+.4} | {} | {} | {} |",
                d.model_id,
                d.prompt_config,
                d.n,
                fmt4(d.baseline_mean),
                fmt4(d.config_mean),
                d.delta,
                d.test.as_ref().map(|t| fmt4(t.p_value)).unwrap_or_else(|| "n/a".into()),
                d.test.as_ref().map(|t| fmt4(t.applicable_alpha())).unwrap_or_else(|| "n/a".into()),
                d.test.as_ref().map(|t| t.significant.to_string()).unwrap_or_else(|| d.note.clone().unwrap_or_default()),
            ));
        }
        line(String::new());
    }
    line("## Cost".into());
    line(String::new());
    if report.costs.is_empty() {
        line("No responses supplied; cost analysis skipped.".into());
    } else {
        let scales: Vec<u64> = report
            .costs
            .iter()
            .flat_map(|c| c.projections.iter().map(|p| p.0))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        line(format!(
            "| model | samples | input tokens | output tokens | total USD | {} |",
            scales.iter().map(|q| format!("{q} queries")).collect::<Vec<_>>().join(" | ")
        ));
        line(format!("|---|---|---|---|---|{}", "---|".repeat(scales.len())));
        for c in &report.costs {
            let proj: Vec<String> = scales
                .iter()
                .map(|q| {
                    c.projections
                        .iter()
                        .find(|p| p.0 == *q)
                        .map(|p| format!("{:.2}", p.1))
                        .unwrap_or_else(|| "n/a".into())
                })
                .collect();
            line(format!(
                "| {} | {} | {} | {} | {} | {} |",
                c.model_id,
                c.samples,
                c.input_tokens,
                c.output_tokens,
                c.total_usd.map(|t| format!("{t:.4}")).unwrap_or_else(|| "unpriced".into()),
                proj.join(" | ")
            ));
        }
    }
    s
}

/// Writes `report.md`, `report.json` and the chart-data CSV files.
pub fn write_report(report: &FullReport, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    datamodel::write_atomic(&out_dir.join(REPORT_MD), render_markdown(report).as_bytes())?;
    datamodel::write_atomic(&out_dir.join(REPORT_JSON), &to_json(report)?)?;

    let mut rows = Vec::new();
    for g in report.summaries.iter().filter(|g| g.group != "all") {
        for name in COMPONENT_NAMES {
            let d = &g.components[name];
            rows.push(vec![g.group.clone(), name.to_string(), d.mean.to_string(), d.sd.to_string()]);
        }
    }
    datamodel::write_atomic(
        &out_dir.join(CHART_COMPONENTS),
        &csv_bytes(&["model", "component", "mean", "sd"], rows)?,
    )?;

    let gap_rows = report
        .comparison
        .as_ref()
        .map(|c| {
            c.gaps
                .iter()
                .map(|(g, r)| {
                    vec![
                        g.clone(),
                        r.semantic_mean.to_string(),
                        r.entity_mean.to_string(),
                        r.gap_pp.to_string(),
                        opt(r.ratio),
                    ]
                })
                .collect()
        })
        .unwrap_or_default();
    datamodel::write_atomic(
        &out_dir.join(CHART_GAP),
        &csv_bytes(&["group", "semantic_mean", "entity_mean", "gap_pp", "ratio"], gap_rows)?,
    )?;

    let sens = &report.sensitivity;
    let mut heat = Vec::new();
    for (i, scheme) in sens.schemes.iter().enumerate() {
        for (j, model) in sens.models.iter().enumerate() {
            let rank = sens.rankings[i]
                .order
                .iter()
                .find(|m| &m.model_id == model)
                .map(|m| m.rank)
                .unwrap_or_default();
            heat.push(vec![scheme.clone(), model.clone(), sens.matrix[i][j].to_string(), rank.to_string()]);
        }
    }
    datamodel::write_atomic(
        &out_dir.join(CHART_HEATMAP),
        &csv_bytes(&["scheme", "model", "score", "rank"], heat)?,
    )?;

    let mut cost = Vec::new();
    for c in &report.costs {
        for (q, usd) in &c.projections {
            cost.push(vec![c.model_id.clone(), q.to_string(), usd.to_string()]);
        }
    }
    datamodel::write_atomic(&out_dir.join(CHART_COST), &csv_bytes(&["model", "queries", "usd"], cost)?)
}
