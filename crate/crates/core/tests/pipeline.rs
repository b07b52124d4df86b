//! End-to-end pipeline behaviour on small fixtures.

mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use vbscore::config::ToolkitConfig;
use vbscore::datamodel::{
    self, ComponentScores, DiseaseCategory, GenerationParams, ModelResponse, PromptConfigKind, QARecord,
    QuestionType, Source, VBScoreResult,
};
use vbscore::harness::{epoch, Completion, Generator, ModelBackend, ResponseCache, SyntheticModel, SyntheticProfile};
use vbscore::pipeline::{self, Backends, Scorer};
use vbscore::scoring::{classify_failures, compose_vb, presets, WeightScheme};
use vbscore::{Error, Result};

use common::fixtures_dir;

fn record(id: &str, question: &str, answer: &str) -> QARecord {
    QARecord {
        id: id.into(),
        source: Source::Who,
        topic: id.into(),
        disease_category: DiseaseCategory::Chronic,
        question_type: QuestionType::Definition,
        question: question.into(),
        reference_answer: answer.into(),
    }
}

fn two_records() -> Vec<QARecord> {
    vec![
        record(
            "asthma",
            "What is asthma?",
            "Asthma is a chronic disease of the airways. Symptoms include wheezing, coughing, chest tightness, and shortness of breath. An inhaler can relieve symptoms.",
        ),
        record(
            "flu",
            "What is influenza?",
            "Influenza is a contagious respiratory illness. Symptoms include fever, cough, sore throat, and fatigue. A yearly flu vaccine lowers the risk.",
        ),
    ]
}

fn scorer(cfg: &ToolkitConfig) -> Scorer {
    Scorer::new(cfg, Backends::reference(cfg).unwrap(), presets::vb()).unwrap()
}

fn quiet_generator(cache: ResponseCache) -> Generator {
    let mut g = Generator::new(Arc::new(cache));
    g.sleep = Arc::new(|_| {});
    g.clock = Arc::new(epoch);
    g
}

/// Counts calls and optionally fails after a budget, simulating an interrupted run.
struct Counting {
    inner: SyntheticModel,
    calls: AtomicUsize,
    budget: Option<usize>,
}

impl ModelBackend for Counting {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.budget.is_some_and(|b| n >= b) {
            return Err(Error::Authentication {
                backend: "mock".into(),
            });
        }
        self.inner.complete(prompt, params)
    }
}

#[test]
fn evaluate_two_records() {
    let cfg = ToolkitConfig::default();
    let ds = two_records();
    let responses: Vec<ModelResponse> = ds
        .iter()
        .map(|r| ModelResponse {
            sample_id: r.id.clone(),
            model_id: "m".into(),
            prompt_config: PromptConfigKind::ZeroShotBaseline,
            text: r.reference_answer.clone(),
            input_tokens: 10,
            output_tokens: 20,
            created_at: epoch(),
        })
        .collect();
    let eval = pipeline::evaluate(&scorer(&cfg), &ds, &responses, 2).unwrap();
    assert_eq!(eval.results.len(), 2);
    for r in &eval.results {
        assert!((r.vb_score - 1.0).abs() < 1e-9, "{r:?}");
        assert!(r.failure_flags.is_empty());
    }
    let summary = pipeline::summaries(&eval.results).unwrap();
    assert_eq!(summary.last().unwrap().components.len(), 4);

    let mut dup = responses.clone();
    dup.push(responses[0].clone());
    assert!(matches!(pipeline::evaluate(&scorer(&cfg), &ds, &dup, 1), Err(Error::Validation(_))));
}

#[test]
fn sweep_grid_and_prompt_comparisons() {
    let cfg = ToolkitConfig::default();
    let ds = two_records();
    let model: Arc<dyn ModelBackend> = Arc::new(SyntheticModel::new("mock", &ds, SyntheticProfile::default()));
    let gen = quiet_generator(ResponseCache::in_memory());
    let run = pipeline::run_sweep(&ds, &[model], PromptConfigKind::ALL, &cfg, &gen, 2).unwrap();
    assert_eq!(run.responses.len(), 8);
    assert_eq!(gen.cache.len(), 8);
    assert!(run.failures.is_empty());
    let eval = pipeline::evaluate(&scorer(&cfg), &ds, &run.responses, 1).unwrap();
    let deltas = pipeline::prompt_sensitivity(&eval.results, 0.05).unwrap();
    assert_eq!(deltas.len(), 3);
    assert!(deltas.iter().all(|d| d.n == 2));
}

#[test]
fn resumed_sweep_makes_no_duplicate_calls() {
    let cfg = ToolkitConfig::default();
    let ds = two_records();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let configs = PromptConfigKind::ALL;

    let first = Arc::new(Counting {
        inner: SyntheticModel::new("mock", &ds, SyntheticProfile::default()),
        calls: AtomicUsize::new(0),
        budget: Some(5),
    });
    let gen = quiet_generator(ResponseCache::open(&path).unwrap());
    let run = pipeline::run_sweep(&ds, &[first.clone() as Arc<dyn ModelBackend>], configs, &cfg, &gen, 1).unwrap();
    assert_eq!(run.responses.len(), 5);
    assert_eq!(run.failures.len(), 3);

    let second = Arc::new(Counting {
        inner: SyntheticModel::new("mock", &ds, SyntheticProfile::default()),
        calls: AtomicUsize::new(0),
        budget: None,
    });
    let gen = quiet_generator(ResponseCache::open(&path).unwrap());
    let run = pipeline::run_sweep(&ds, &[second.clone() as Arc<dyn ModelBackend>], configs, &cfg, &gen, 1).unwrap();
    assert_eq!(run.responses.len(), 8);
    assert_eq!(run.cache_hits, 5);
    assert_eq!(second.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn rag_improvement_is_reported() {
    let cfg = ToolkitConfig::default();
    let ds: Vec<QARecord> = (0..6)
        .map(|i| {
            record(
                &format!("s{i}"),
                &format!("What is condition {i}?"),
                "Hypertension is high blood pressure. It damages the heart, kidneys, and brain. Risk factors include salt, alcohol, and tobacco. Regular checks are important.",
            )
        })
        .collect();
    let profile = SyntheticProfile {
        keep: 0.3,
        negate: 0.2,
        ..SyntheticProfile::default()
    };
    let model: Arc<dyn ModelBackend> = Arc::new(SyntheticModel::new("mock", &ds, profile));
    let gen = quiet_generator(ResponseCache::in_memory());
    let configs = [PromptConfigKind::ZeroShotBaseline, PromptConfigKind::RagContext];
    let run = pipeline::run_sweep(&ds, &[model], &configs, &cfg, &gen, 1).unwrap();
    let eval = pipeline::evaluate(&scorer(&cfg), &ds, &run.responses, 1).unwrap();
    let deltas = pipeline::prompt_sensitivity(&eval.results, 0.05).unwrap();
    assert_eq!(deltas.len(), 1);
    let d = &deltas[0];
    assert_eq!(d.prompt_config, PromptConfigKind::RagContext);
    let base: Vec<f64> = eval
        .results
        .iter()
        .filter(|r| r.prompt_config == PromptConfigKind::ZeroShotBaseline)
        .map(|r| r.vb_score)
        .collect();
    let rag: Vec<f64> = eval
        .results
        .iter()
        .filter(|r| r.prompt_config == PromptConfigKind::RagContext)
        .map(|r| r.vb_score)
        .collect();
    let by_hand = rag.iter().sum::<f64>() / 6.0 - base.iter().sum::<f64>() / 6.0;
    assert!(d.delta > 0.0);
    assert!((d.delta - by_hand).abs() < 1e-12);
    assert!(d.test.is_some() || d.note.is_some());
    assert!(rag.iter().all(|v| (v - 1.0).abs() < 1e-9));
}

fn table_results() -> (Vec<QARecord>, Vec<VBScoreResult>) {
    let means = [
        ("GPT-4", ComponentScores::new(0.073, 0.538, 0.338, 0.0358)),
        ("Claude", ComponentScores::new(0.066, 0.518, 0.179, 0.0591)),
        ("Gemini", ComponentScores::new(0.058, 0.488, 0.696, 0.0196)),
    ];
    let ds: Vec<QARecord> = (0..4).map(|i| record(&format!("s{i}"), &format!("q{i}?"), "Answer.")).collect();
    let scheme = presets::vb();
    let mut results = Vec::new();
    for (model, c) in means {
        for r in &ds {
            let vb = compose_vb(&c, &scheme);
            results.push(VBScoreResult {
                sample_id: r.id.clone(),
                model_id: model.into(),
                prompt_config: PromptConfigKind::ZeroShotBaseline,
                components: c,
                vb_score: vb,
                weight_scheme: "vb".into(),
                failure_flags: classify_failures(&c, vb, &Default::default()),
            });
        }
    }
    (ds, results)
}

#[test]
fn compare_and_sensitivity_on_table_means() {
    let cfg = ToolkitConfig::default();
    let (ds, results) = table_results();
    let cmp = pipeline::compare(&results, &ds, &cfg, None).unwrap();
    assert_eq!(cmp.ranking.model_order(), ["Gemini", "GPT-4", "Claude"]);
    assert_eq!(cmp.anova.p_value, 0.0);
    assert_eq!(cmp.pairwise.len(), 3);
    assert!(cmp.pairwise.iter().all(|p| p.effect.is_none() && p.effect_note.is_some()));

    let means = pipeline::model_means(&results, PromptConfigKind::ZeroShotBaseline);
    let sens = pipeline::sensitivity(&means, &pipeline::ordered_schemes(&cfg).unwrap()).unwrap();
    assert!(sens.stable);
    assert_eq!(sens.schemes[0], "vb");
    assert_eq!(sens.matrix.len(), 5);
}

#[test]
fn crafted_flip_is_identified() {
    let means = BTreeMap::from([
        ("precise".to_string(), ComponentScores::new(0.9, 0.2, 0.3, 0.2)),
        ("fluent".to_string(), ComponentScores::new(0.1, 0.9, 0.6, 0.3)),
    ]);
    let vb = presets::vb::<f64>();
    let entity = presets::entity::<f64>();
    // vb: precise .27+.06+.075+.03 = .435, fluent .03+.27+.15+.045 = .495
    // entity: precise .45+.04+.06+.02 = .57, fluent .05+.18+.12+.03 = .38
    let r = pipeline::sensitivity(&means, &[vb, entity]).unwrap();
    assert!(!r.stable);
    assert_eq!(r.flips, vec!["entity".to_string()]);
    assert_eq!(r.rankings[0].model_order(), ["fluent", "precise"]);
    assert_eq!(r.rankings[1].model_order(), ["precise", "fluent"]);
}

#[test]
fn report_outputs() {
    let cfg = ToolkitConfig::default();
    let dir = fixtures_dir();
    let ds = datamodel::load_dataset(dir.join("dataset.jsonl")).unwrap();
    let responses = datamodel::load_responses(dir.join("responses.jsonl"), &ds).unwrap();
    let eval = pipeline::evaluate(&scorer(&cfg), &ds, &responses, 4).unwrap();
    let report = pipeline::build_report(&eval.results, &ds, &responses, &cfg).unwrap();
    let out = tempfile::tempdir().unwrap();
    pipeline::write_report(&report, out.path()).unwrap();

    let rows = |f: &str| {
        let text = std::fs::read_to_string(out.path().join(f)).unwrap();
        text.lines().skip(1).map(str::to_string).collect::<Vec<_>>()
    };
    assert_eq!(rows(pipeline::CHART_COMPONENTS).len(), 3 * 4);
    assert_eq!(rows(pipeline::CHART_GAP).len(), 4);
    assert_eq!(rows(pipeline::CHART_HEATMAP).len(), 5 * 3);
    let cost = rows(pipeline::CHART_COST);
    assert_eq!(cost.len(), 3 * 4);
    for q in ["1000", "10000", "100000", "1000000"] {
        assert!(cost.iter().any(|r| r.split(',').nth(1) == Some(q)));
    }
    let md = std::fs::read_to_string(out.path().join(pipeline::REPORT_MD)).unwrap();
    assert!(md.contains("## Weight sensitivity"));
    assert!(md.contains("## Cost"));

    assert!(matches!(
        pipeline::build_report(&[], &ds, &[], &cfg),
        Err(Error::NoData(_))
    ));
}

#[test]
fn custom_scheme_flows_into_results() {
    let mut cfg = ToolkitConfig::default();
    cfg.schemes.push(WeightScheme::new("flat", 0.25, 0.25, 0.25, 0.25).unwrap());
    cfg.scheme = "flat".into();
    let ds = two_records();
    let responses = vec![ModelResponse {
        sample_id: "flu".into(),
        model_id: "m".into(),
        prompt_config: PromptConfigKind::ZeroShotBaseline,
        text: "Influenza is a contagious respiratory illness.".into(),
        input_tokens: 1,
        output_tokens: 1,
        created_at: epoch(),
    }];
    let s = Scorer::new(&cfg, Backends::reference(&cfg).unwrap(), cfg.resolve_scheme("flat").unwrap()).unwrap();
    let eval = pipeline::evaluate(&s, &ds, &responses, 1).unwrap();
    let r = &eval.results[0];
    assert_eq!(r.weight_scheme, "flat");
    let mean = r.components.as_array().iter().sum::<f64>() / 4.0;
    assert!((r.vb_score - mean).abs() < 1e-12);
    let out = tempfile::tempdir().unwrap();
    pipeline::write_evaluation(&eval, out.path(), &cfg).unwrap();
    let back = datamodel::load_results_json(out.path().join(pipeline::RESULTS_JSON)).unwrap();
    assert_eq!(back, eval.results);
}
