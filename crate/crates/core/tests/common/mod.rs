//! Oracles, fixtures and property checks shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use vbscore::datamodel::{ComponentScores, GenerationParams};
use vbscore::entity::{normalize_entity, AbbreviationTable, DEFAULT_MIN_TOKEN_LEN};
use vbscore::harness::cache_key;
use vbscore::scoring::{compose_vb, FailureThresholds, WeightScheme};
use vbscore::stats::{self, TVariant};
use vbscore::structure::{structured_overlap, EnumerationSet};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a.is_infinite() && a == b) || (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// textbook statistics oracles

pub fn o_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Computational formula `(Σx² - (Σx)²/n) / (n - 1)`.
pub fn o_var(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let s: f64 = x.iter().sum();
    let s2: f64 = x.iter().map(|v| v * v).sum();
    ((s2 - s * s / n) / (n - 1.0)).max(0.0)
}

/// k-th smallest (0-based) by counting: the value with at most k elements below it
/// and more than k at or below it.
fn o_kth(x: &[f64], k: usize) -> f64 {
    *x.iter()
        .find(|v| {
            let below = x.iter().filter(|y| *y < *v).count();
            let at_or_below = x.iter().filter(|y| *y <= *v).count();
            below <= k && k < at_or_below
        })
        .expect("k within range")
}

pub fn o_median(x: &[f64]) -> f64 {
    let n = x.len();
    if n % 2 == 1 {
        o_kth(x, n / 2)
    } else {
        (o_kth(x, n / 2 - 1) + o_kth(x, n / 2)) / 2.0
    }
}

pub fn t_p(t: f64, df: f64) -> f64 {
    let d = StudentsT::new(0.0, 1.0, df).expect("valid df");
    2.0 * d.sf(t.abs())
}

pub fn f_p(f: f64, d1: f64, d2: f64) -> f64 {
    FisherSnedecor::new(d1, d2).expect("valid df").sf(f)
}

/// `(t, df)` of the pooled two-sample test.
pub fn o_pooled_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let sp2 = ((na - 1.0) * o_var(a) + (nb - 1.0) * o_var(b)) / df;
    ((o_mean(a) - o_mean(b)) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt(), df)
}

/// `(t, df)` of Welch's test with the Welch–Satterthwaite df.
pub fn o_welch_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (o_var(a) / na, o_var(b) / nb);
    let t = (o_mean(a) - o_mean(b)) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    (t, df)
}

pub fn o_paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    (o_mean(&d) / (o_var(&d).sqrt() / n.sqrt()), n - 1.0)
}

/// `(F, df_between, df_within)` with SSB obtained as SST - SSW.
pub fn o_anova(groups: &[Vec<f64>]) -> (f64, f64, f64) {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let grand = o_mean(&all);
    let sst: f64 = all.iter().map(|v| (v - grand).powi(2)).sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = o_mean(g);
            g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum();
    let k = groups.len() as f64;
    let n = all.len() as f64;
    let (d1, d2) = (k - 1.0, n - k);
    (((sst - ssw) / d1) / (ssw / d2), d1, d2)
}

pub fn o_cohens_d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp = (((na - 1.0) * o_var(a) + (nb - 1.0) * o_var(b)) / (na + nb - 2.0)).sqrt();
    (o_mean(a) - o_mean(b)) / sp
}

fn sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // a mix of continuous draws and coarse grid values (ties)
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                f64::from(rng.gen_range(0..10u8)) / 10.0
            } else {
                rng.gen_range(-2.0..3.0)
            }
        })
        .collect()
}

/// Runs every statistics routine against the oracles on `fixtures` random inputs;
/// returns the number of fixtures checked or the first disagreement.
pub fn stats_oracle_suite(fixtures: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const STAT: f64 = 1e-6;
    const P: f64 = 1e-5;
    let check = |what: &str, i: usize, got: f64, want: f64, tol: f64| -> Result<(), String> {
        if close(got, want, tol) {
            Ok(())
        } else {
            Err(format!("fixture {i}: {what} = {got}, oracle {want}"))
        }
    };
    for i in 0..fixtures {
        let na = rng.gen_range(2..12);
        let nb = rng.gen_range(2..12);
        let a = sample(&mut rng, na);
        let b = sample(&mut rng, nb);

        let d = stats::describe(&a).map_err(|e| e.to_string())?;
        check("mean", i, d.mean, o_mean(&a), STAT)?;
        check("sd", i, d.sd, o_var(&a).sqrt(), STAT)?;
        check("median", i, d.median, o_median(&a), STAT)?;
        check("min", i, d.min, a.iter().copied().fold(f64::INFINITY, f64::min), 0.0)?;
        check("max", i, d.max, a.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0.0)?;

        let r = stats::two_sample_t(&a, &b, 0.05, 1, TVariant::Pooled).map_err(|e| e.to_string())?;
        let (t, df) = o_pooled_t(&a, &b);
        check("pooled t", i, r.statistic, t, STAT)?;
        check("pooled df", i, r.df[0], df, STAT)?;
        check("pooled p", i, r.p_value, t_p(t, df), P)?;

        let r = stats::two_sample_t(&a, &b, 0.05, 1, TVariant::Welch).map_err(|e| e.to_string())?;
        let (t, df) = o_welch_t(&a, &b);
        check("welch t", i, r.statistic, t, STAT)?;
        check("welch df", i, r.df[0], df, STAT)?;
        check("welch p", i, r.p_value, t_p(t, df), P)?;

        let b2 = sample(&mut rng, na);
        let r = stats::paired_t(&a, &b2, 0.05, 1).map_err(|e| e.to_string())?;
        let (t, df) = o_paired_t(&a, &b2);
        check("paired t", i, r.statistic, t, STAT)?;
        check("paired p", i, r.p_value, t_p(t, df), P)?;

        let k = rng.gen_range(2..6);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let n = rng.gen_range(2..10);
                sample(&mut rng, n)
            })
            .collect();
        let r = stats::one_way_anova(&groups, 0.05).map_err(|e| e.to_string())?;
        let (f, d1, d2) = o_anova(&groups);
        check("anova F", i, r.statistic, f, STAT * f.abs().max(1.0))?;
        check("anova df1", i, r.df[0], d1, 0.0)?;
        check("anova df2", i, r.df[1], d2, 0.0)?;
        check("anova p", i, r.p_value, f_p(f, d1, d2), P)?;

        let dd = stats::cohens_d(&a, &b).map_err(|e| e.to_string())?;
        check("cohens d", i, dd, o_cohens_d(&a, &b), STAT)?;
    }
    Ok(fixtures)
}

// ---------------------------------------------------------------------------
// property checks

pub fn scheme_strategy() -> impl Strategy<Value = WeightScheme<f64>> {
    prop::array::uniform4(0.0f64..1.0).prop_filter_map("degenerate weights", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| WeightScheme::new("random", w[0] / s, w[1] / s, w[2] / s, w[3] / s).ok())?
    })
}

pub fn components_strategy() -> impl Strategy<Value = ComponentScores<f64>> {
    prop::array::uniform4(0.0f64..=1.0).prop_map(ComponentScores::from_array)
}

/// Bounded in [0, 1] and non-decreasing in every component.
pub fn check_composition(
    c: &ComponentScores<f64>,
    scheme: &WeightScheme<f64>,
    bump: f64,
    which: usize,
) -> Result<(), TestCaseError> {
    let base = compose_vb(c, scheme);
    prop_assert!((0.0..=1.0).contains(&base), "score {} out of range", base);
    let mut arr = c.as_array();
    arr[which] = (arr[which] + bump).min(1.0);
    let raised = compose_vb(&ComponentScores::from_array(arr), scheme);
    prop_assert!(raised >= base, "raising component {} lowered {} to {}", which, base, raised);
    Ok(())
}

pub const ITEM_VOCAB: &[&str] = &[
    "fever", "cough", "fatigue", "headache", "breath", "breathing", "breathless", "chest pain",
    "TB", "tuberculosis", "mg", "milligrams", "nausea", "rash", "sore throat", "throat", "rest",
    "fluids", "insulin", "diet", "exercise", "sleep", "vomiting", "flu", "influenza",
];

pub fn item_set_strategy() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(ITEM_VOCAB), 0..8)
}

pub fn check_jaccard(a: &[&str], b: &[&str]) -> Result<(), TestCaseError> {
    let t = AbbreviationTable::default_table();
    let (sa, sb) = (EnumerationSet::from_items(a, &t), EnumerationSet::from_items(b, &t));
    let ab: f64 = structured_overlap(&sa, &sb, DEFAULT_MIN_TOKEN_LEN);
    let ba: f64 = structured_overlap(&sb, &sa, DEFAULT_MIN_TOKEN_LEN);
    prop_assert_eq!(ab, ba);
    prop_assert!((0.0..=1.0).contains(&ab));
    if !sa.is_empty() {
        let aa: f64 = structured_overlap(&sa, &sa, DEFAULT_MIN_TOKEN_LEN);
        prop_assert_eq!(aa, 1.0);
    }
    if sa.is_empty() || sb.is_empty() {
        prop_assert_eq!(ab, 0.0);
    }
    Ok(())
}

/// Fuzz corpus: words, abbreviations, articles, punctuation and odd whitespace.
pub fn entity_text_strategy() -> impl Strategy<Value = String> {
    let token = prop_oneof![
        prop::sample::select(vec![
            "the", "a", "an", "The", "mg", "MG", "milligrams", "TB", "tb", "Fever", "fever,", "cough.",
            "acetaminophen,", "500", "BP", "flu", "MMR", "(", ")", "-", "/", "'s", "HIV/AIDS", "e.g.",
            "T2D", "COVID-19", "Ünïcode", "...", ";",
        ])
        .prop_map(str::to_string),
        "[a-zA-Z]{1,10}",
        "[a-z0-9\\-,.;:!?'\"()]{1,6}",
    ];
    let sep = prop::sample::select(vec![" ", "  ", "\t", ", ", "\n"]);
    prop::collection::vec((token, sep), 1..7)
        .prop_map(|parts| parts.into_iter().map(|(t, s)| format!("{t}{s}")).collect())
}

pub fn check_normalization(raw: &str) -> Result<(), TestCaseError> {
    let t = AbbreviationTable::default_table();
    if let Ok(once) = normalize_entity(raw, &t) {
        prop_assert!(!once.is_empty());
        let twice = normalize_entity(&once, &t);
        prop_assert!(twice.is_ok(), "renormalizing {:?} failed", once);
        prop_assert_eq!(twice.unwrap(), once);
    }
    Ok(())
}

/// Threshold-adjacent values so boundaries are exercised.
pub fn score_value(rng: &mut ChaCha8Rng) -> f64 {
    const EDGES: [f64; 8] = [0.0, 0.0999, 0.1, 0.2999, 0.3, 0.4999, 0.5, 1.0];
    if rng.gen_bool(0.3) {
        EDGES[rng.gen_range(0..EDGES.len())]
    } else {
        rng.gen_range(0.0..=1.0)
    }
}

/// `failure_overlap` against an exhaustive count on `sets` random result sets.
pub fn failure_overlap_suite(sets: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let th = FailureThresholds::<f64>::default();
    for s in 0..sets {
        let n = rng.gen_range(1..40);
        let comps: Vec<ComponentScores<f64>> = (0..n)
            .map(|_| {
                ComponentScores::new(
                    score_value(&mut rng),
                    score_value(&mut rng),
                    score_value(&mut rng),
                    score_value(&mut rng),
                )
            })
            .collect();
        let high = [0.3, 0.5, 0.7][s % 3];
        let got = stats::failure_overlap(&comps, &th, high).map_err(|e| e.to_string())?;
        let mut low_e = 0;
        let mut low_f = 0;
        for c in &comps {
            let fluent = c.semantic_similarity >= high;
            if fluent && c.entity_f1 < th.entity {
                low_e += 1;
            }
            if fluent && c.factual_consistency < th.factual {
                low_f += 1;
            }
        }
        let want = (low_e, low_f, low_e as f64 / n as f64, low_f as f64 / n as f64);
        let have = (
            got.high_semantic_low_entity,
            got.high_semantic_low_factual,
            got.high_semantic_low_entity_fraction,
            got.high_semantic_low_factual_fraction,
        );
        if want != have || got.n != n {
            return Err(format!("set {s}: got {have:?}, exhaustive count {want:?}"));
        }
    }
    Ok(sets)
}

pub fn params_strategy() -> impl Strategy<Value = GenerationParams> {
    (0.0f64..2.0, 1u32..4096, 0.01f64..=1.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(t, m, p, f, r)| {
        GenerationParams {
            temperature: t,
            max_tokens: m,
            top_p: p,
            frequency_penalty: f,
            presence_penalty: r,
        }
    })
}

/// The key is a pure function of its inputs and changes under any single-field edit.
pub fn check_cache_key(model: &str, prompt: &str, params: &GenerationParams, field: usize) -> Result<(), TestCaseError> {
    let k = cache_key(model, prompt, params);
    prop_assert_eq!(&k, &cache_key(model, prompt, &params.clone()));
    prop_assert_eq!(k.len(), 64);
    let mut p = *params;
    let (m2, pr2) = (format!("{model}x"), format!("{prompt} "));
    let (m, pr) = match field {
        0 => (m2.as_str(), prompt),
        1 => (model, pr2.as_str()),
        2 => {
            p.temperature += 0.5;
            (model, prompt)
        }
        3 => {
            p.max_tokens += 1;
            (model, prompt)
        }
        4 => {
            p.top_p /= 2.0;
            (model, prompt)
        }
        5 => {
            p.frequency_penalty += 0.25;
            (model, prompt)
        }
        _ => {
            p.presence_penalty -= 0.25;
            (model, prompt)
        }
    };
    prop_assert_ne!(k, cache_key(m, pr, &p), "field {} did not change the key", field);
    Ok(())
}

pub fn distinct<T: Ord + Clone>(items: &[T]) -> BTreeSet<T> {
    items.iter().cloned().collect()
}
