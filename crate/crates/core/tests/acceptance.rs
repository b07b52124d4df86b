//! Acceptance criteria; prints one PASS/FAIL line per criterion.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use proptest::test_runner::TestError;

use vbscore::config::ToolkitConfig;
use vbscore::datamodel::{self, ComponentScores, FailureFlag};
use vbscore::entity::{
    entity_prf, match_entities, normalize_entity, AbbreviationTable, EntitySet, MatchReason, DEFAULT_MIN_TOKEN_LEN,
};
use vbscore::harness::{cost, scale_projection, ModelPrice, PriceTable};
use vbscore::pipeline::{self, Backends, Scorer};
use vbscore::scoring::{classify_failures, compose_vb, presets, rank_models, FailureThresholds};
use vbscore::stats::{bonferroni, relative_gap_pct, GapReport};

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, expected {want} ± {tol}"))
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let detail = f()?;
    let elapsed = start.elapsed();
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))?;
    Ok(format!("{detail} in {elapsed:.2?}"))
}

fn model_means() -> BTreeMap<String, ComponentScores<f64>> {
    BTreeMap::from([
        ("GPT-4".to_string(), ComponentScores::new(0.073, 0.538, 0.338, 0.0358)),
        ("Claude".to_string(), ComponentScores::new(0.066, 0.518, 0.179, 0.0591)),
        ("Gemini".to_string(), ComponentScores::new(0.058, 0.488, 0.696, 0.0196)),
    ])
}

fn composition_parity() -> Outcome {
    timed(Duration::from_secs(1), || {
        let means = model_means();
        let scheme = presets::vb();
        let mut parts = Vec::new();
        for (model, reported) in [("GPT-4", 0.2714), ("Claude", 0.2291), ("Gemini", 0.3402)] {
            let got = compose_vb(&means[model], &scheme);
            within(got, reported, 0.005, model)?;
            parts.push(format!("{model} {got:.4}"));
        }
        Ok(parts.join(", "))
    })
}

fn rank_stability() -> Outcome {
    timed(Duration::from_secs(1), || {
        let schemes = presets::all::<f64>();
        ensure(schemes.len() == 5, || format!("{} presets", schemes.len()))?;
        for r in rank_models(&model_means(), &schemes) {
            ensure(r.model_order() == ["Gemini", "GPT-4", "Claude"], || {
                format!("{}: {:?}", r.scheme, r.model_order())
            })?;
            ensure(r.ties.is_empty(), || format!("{}: unexpected ties", r.scheme))?;
        }
        Ok("Gemini > GPT-4 > Claude under all 5 schemes".into())
    })
}

fn entity_matching() -> Outcome {
    let t = AbbreviationTable::default_table();
    let rows: [(&str, &str, Option<MatchReason>); 7] = [
        ("fever", "fever", Some(MatchReason::Exact)),
        ("acetaminophen", "Acetaminophen", Some(MatchReason::CaseNormalized)),
        ("tuberculosis", "TB", Some(MatchReason::Abbreviation)),
        ("shortness of breath", "difficulty breathing", Some(MatchReason::TokenSubstring)),
        ("cough, fever", "respiratory symptoms", None),
        ("heart attack", "myocardial infarction", None),
        ("metformin", "oral medication", None),
    ];
    for (r, g, want) in rows {
        let report = match_entities(
            &EntitySet::from_surfaces([r], &t),
            &EntitySet::from_surfaces([g], &t),
            DEFAULT_MIN_TOKEN_LEN,
        );
        let got = report.matched_pairs.first().map(|p| p.reason);
        ensure(got == want, || format!("{r:?} vs {g:?}: {got:?}, expected {want:?}"))?;
        let f1 = entity_prf::<f64>(&report).f1;
        ensure(f1 == if want.is_some() { 1.0 } else { 0.0 }, || format!("{r:?} vs {g:?}: f1 {f1}"))?;
    }
    let norm = |s: &str| normalize_entity(s, &t).map_err(|e| e.to_string());
    for (raw, want) in [("Fever", "fever"), ("the cough", "cough"), ("acetaminophen,", "acetaminophen")] {
        let got = norm(raw)?;
        ensure(got == want, || format!("normalize({raw:?}) = {got:?}, expected {want:?}"))?;
    }
    ensure(norm("mg")? == norm("milligrams")?, || "mg and milligrams differ".into())?;
    Ok("7 matching rows, 4 normalization examples".into())
}

fn gap_analysis() -> Outcome {
    let avg = GapReport::from_means(0.516, 0.062);
    within(avg.gap_pp, 45.4, 0.05, "average gap")?;
    within(avg.ratio.ok_or("ratio absent")?, 8.3, 0.05, "average ratio")?;
    for (model, s, e, want) in [
        ("GPT-4", 0.538, 0.073, 46.5),
        ("Claude", 0.518, 0.066, 45.2),
        ("Gemini", 0.487, 0.026, 46.1),
    ] {
        within(GapReport::from_means(s, e).gap_pp, want, 0.05, model)?;
    }
    Ok(format!("average {:.1} pp, ratio {:.2}", avg.gap_pp, avg.ratio.unwrap_or_default()))
}

fn cost_math() -> Outcome {
    let prices = PriceTable::default();
    let claude = cost(48_098, 14_201, prices.get("claude-sonnet-4.5").ok_or("no claude price")?);
    within(claude, 0.36, 0.01, "Claude cost")?;
    let gemini = cost(48_098, 14_201, prices.get("gemini-2.5-flash").ok_or("no gemini price")?);
    within(gemini, 0.0, 0.0, "Gemini cost")?;
    within(cost(0, 0, &ModelPrice { input_per_million: 3.0, output_per_million: 15.0 }), 0.0, 0.0, "zero tokens")?;
    let rows: [(f64, [f64; 4]); 3] = [
        (2.30, [47.92, 479.17, 4_791.67, 47_916.67]),
        (0.36, [7.50, 75.00, 750.00, 7_500.00]),
        (0.0, [0.0; 4]),
    ];
    for (total, expected) in rows {
        for (q, want) in [1_000u64, 10_000, 100_000, 1_000_000].into_iter().zip(expected) {
            let got = scale_projection(total, 48, q).map_err(|e| e.to_string())?;
            within(got, want, 0.01, &format!("${total} at {q} queries"))?;
        }
    }
    Ok(format!("Claude ${claude:.4}; projections at 10^3..10^6 reproduced"))
}

fn disparity() -> Outcome {
    for (model, inf, chr, want) in [
        ("GPT-4", 0.2894, 0.2601, 11.3),
        ("Claude", 0.2584, 0.2168, 19.2),
        ("Gemini", 0.3630, 0.3235, 12.2),
        ("Average", 0.3036, 0.2668, 13.8),
    ] {
        within(relative_gap_pct(inf, chr).ok_or("zero base")?, want, 0.1, model)?;
    }
    Ok("+11.3 / +19.2 / +12.2 / +13.8 %".into())
}

fn stats_oracle() -> Outcome {
    let n = stats_oracle_suite(200, 7)?;
    ensure(bonferroni(0.05, 3) == 0.05 / 3.0, || "bonferroni".into())?;
    within(bonferroni(0.05, 3), 0.016667, 5e-7, "alpha/3")?;
    Ok(format!("{n} random fixtures, Bonferroni alpha/3 exact"))
}

fn run<V: std::fmt::Debug>(name: &str, r: Result<(), TestError<V>>) -> Result<(), String> {
    r.map_err(|e| format!("{name}: {e}"))
}

fn property_suites() -> Outcome {
    let mut runner = common::runner(1_000);
    run(
        "composition",
        runner.run(
            &(components_strategy(), scheme_strategy(), 0.0f64..=1.0, 0usize..4),
            |(c, s, bump, which)| check_composition(&c, &s, bump, which),
        ),
    )?;
    let mut runner = common::runner(500);
    run("jaccard", runner.run(&(item_set_strategy(), item_set_strategy()), |(a, b)| check_jaccard(&a, &b)))?;
    let mut runner = common::runner(1_000);
    run("normalization", runner.run(&entity_text_strategy(), |s| check_normalization(&s)))?;
    failure_overlap_suite(100, 11)?;
    let mut runner = common::runner(500);
    run(
        "cache key",
        runner.run(
            &(".{0,12}", ".{0,40}", params_strategy(), 0usize..7),
            |(m, p, params, field)| check_cache_key(&m, &p, &params, field),
        ),
    )?;
    Ok("composition (1000 draws), Jaccard, normalization, failure overlap (100 sets), cache key".into())
}

fn pipeline_determinism() -> Outcome {
    timed(Duration::from_secs(60), || {
        let dir = fixtures_dir();
        let dataset = datamodel::load_dataset(dir.join("dataset.jsonl")).map_err(|e| e.to_string())?;
        let responses = datamodel::load_responses(dir.join("responses.jsonl"), &dataset).map_err(|e| e.to_string())?;
        let models: BTreeSet<&str> = responses.iter().map(|r| r.model_id.as_str()).collect();
        ensure(dataset.len() == 48 && models.len() == 3, || {
            format!("{} records, {} models", dataset.len(), models.len())
        })?;
        let cfg = ToolkitConfig::default();
        let mut outputs = Vec::new();
        for parallel in [1, 4] {
            let backends = Backends::reference(&cfg).map_err(|e| e.to_string())?;
            let scorer = Scorer::new(&cfg, backends, presets::vb()).map_err(|e| e.to_string())?;
            let eval = pipeline::evaluate(&scorer, &dataset, &responses, parallel).map_err(|e| e.to_string())?;
            ensure(eval.failures.is_empty() && eval.results.len() == 144, || {
                format!("{} results, {} failures", eval.results.len(), eval.failures.len())
            })?;
            let out = tempfile::tempdir().map_err(|e| e.to_string())?;
            pipeline::write_evaluation(&eval, out.path(), &cfg).map_err(|e| e.to_string())?;
            let files: Vec<Vec<u8>> = [pipeline::RESULTS_CSV, pipeline::RESULTS_JSON, pipeline::FAILURE_MANIFEST]
                .iter()
                .map(|f| std::fs::read(out.path().join(f)).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            outputs.push(files);
        }
        ensure(outputs[0] == outputs[1], || "result files differ between runs".into())?;
        Ok("48 records x 3 models, byte-identical across runs".into())
    })
}

fn threshold_classification() -> Outcome {
    use FailureFlag::*;
    let th = FailureThresholds::<f64>::default();
    let all: BTreeSet<FailureFlag> = FailureFlag::ALL.iter().copied().collect();
    let cases: [([f64; 4], f64, BTreeSet<FailureFlag>); 10] = [
        ([0.05, 0.5, 0.6, 0.2], 0.35, BTreeSet::from([EntityFail])),
        ([0.5, 0.5, 0.5, 0.5], 0.5, BTreeSet::new()),
        ([0.0; 4], 0.0, all),
        ([0.10, 0.30, 0.50, 0.10], 0.20, BTreeSet::new()),
        ([0.0999, 0.30, 0.50, 0.10], 0.20, BTreeSet::from([EntityFail])),
        ([0.10, 0.2999, 0.50, 0.10], 0.20, BTreeSet::from([SemanticFail])),
        ([0.10, 0.30, 0.49, 0.10], 0.20, BTreeSet::from([FactualFail])),
        ([0.10, 0.30, 0.50, 0.0999], 0.20, BTreeSet::from([StructureFail])),
        ([0.10, 0.30, 0.50, 0.10], 0.1999, BTreeSet::from([SystemicFail])),
        ([1.0; 4], 1.0, BTreeSet::new()),
    ];
    for (i, (c, vb, want)) in cases.iter().enumerate() {
        let got = classify_failures(&ComponentScores::from_array(*c), *vb, &th);
        ensure(&got == want, || format!("case {i}: {got:?}, expected {want:?}"))?;
    }
    Ok("10 boundary cases, strict inequality".into())
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("composition parity", composition_parity),
        ("rank stability", rank_stability),
        ("entity matching", entity_matching),
        ("gap analysis", gap_analysis),
        ("cost math", cost_math),
        ("disparity stats", disparity),
        ("statistical oracle suite", stats_oracle),
        ("property suites", property_suites),
        ("pipeline determinism", pipeline_determinism),
        ("threshold classification", threshold_classification),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr().lock();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(detail) => format!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed.push(*name);
                format!("FAIL {:>2} {name}: {why}", i + 1)
            }
        };
        writeln!(err, "{line}").expect("stderr");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
