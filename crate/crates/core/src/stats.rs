//! Descriptive statistics, hypothesis tests and the comparison analyses built on them.

use serde::{Deserialize, Serialize};

use crate::datamodel::{ComponentScores, QARecord, VBScoreResult};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scoring::FailureThresholds;

// ---------------------------------------------------------------------------
// special functions

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // reflection
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin().abs()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS[0]);
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc = acc + T::lit(*c) / (x + T::from_usize_lossy(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

const MAX_CF_ITERATIONS: usize = 500;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf<T: Scalar>(a: T, b: T, x: T) -> T {
    let tiny = T::min_positive_value() / T::epsilon();
    let eps = T::epsilon();
    let one = T::one();
    let two = T::lit(2.0);
    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=MAX_CF_ITERATIONS {
        let m = T::from_usize_lossy(m);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h = h * d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let del = d * c;
        h = h * del;
        if (del - one).abs() <= eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn reg_inc_beta<T: Scalar>(a: T, b: T, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if x >= T::one() {
        return T::one();
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (T::one() - x).ln();
    let front = ln_front.exp();
    let v = if x < (a + T::one()) / (a + b + T::lit(2.0)) {
        front * beta_cf(a, b, x) / a
    } else {
        T::one() - front * beta_cf(b, a, T::one() - x) / b
    };
    v.max(T::zero()).min(T::one())
}

/// Two-sided p-value of Student's t statistic with `df` degrees of freedom.
pub fn t_two_sided_p<T: Scalar>(t: T, df: T) -> T {
    if t.is_nan() {
        return T::one();
    }
    if t.is_infinite() {
        return T::zero();
    }
    let x = df / (df + t * t);
    reg_inc_beta(df / T::lit(2.0), T::lit(0.5), x)
}

/// Upper-tail probability `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_survival<T: Scalar>(f: T, d1: T, d2: T) -> T {
    if f.is_nan() || f <= T::zero() {
        return T::one();
    }
    if f.is_infinite() {
        return T::zero();
    }
    let x = d2 / (d2 + d1 * f);
    reg_inc_beta(d2 / T::lit(2.0), d1 / T::lit(2.0), x)
}

// ---------------------------------------------------------------------------
// descriptive statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveSummary<T> {
    pub n: usize,
    pub mean: T,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub sd: T,
    pub median: T,
    pub min: T,
    pub max: T,
}

pub fn mean<T: Scalar>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len()))
}

/// Sample variance with the `n - 1` denominator (two-pass).
pub fn variance<T: Scalar>(values: &[T]) -> Result<T> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Ok(T::zero());
    }
    let ss: T = values.iter().map(|v| (*v - m) * (*v - m)).sum();
    Ok(ss / T::from_usize_lossy(values.len() - 1))
}

pub fn describe<T: Scalar>(values: &[T]) -> Result<DescriptiveSummary<T>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
    };
    let m = mean(values)?;
    Ok(DescriptiveSummary {
        n,
        // rounding can push the mean of near-constant data just outside the range
        mean: m.max(sorted[0]).min(sorted[n - 1]),
        sd: variance(values)?.sqrt(),
        median,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

// ---------------------------------------------------------------------------
// hypothesis tests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    OneWayAnova,
    PooledT,
    WelchT,
    PairedT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TVariant {
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult<T> {
    pub test: TestKind,
    pub statistic: T,
    pub p_value: T,
    pub df: Vec<T>,
    pub alpha: T,
    /// `alpha / m` when the test is one of `m > 1` comparisons.
    pub alpha_adjusted: Option<T>,
    pub significant: bool,
}

impl<T: Scalar> TestResult<T> {
    fn new(test: TestKind, statistic: T, p_value: T, df: Vec<T>, alpha: T, comparisons: usize) -> Self {
        let p_value = p_value.max(T::zero()).min(T::one());
        let alpha_adjusted = (comparisons > 1).then(|| bonferroni(alpha, comparisons));
        let applicable = alpha_adjusted.unwrap_or(alpha);
        Self {
            test,
            statistic,
            p_value,
            df,
            alpha,
            alpha_adjusted,
            significant: p_value < applicable,
        }
    }

    /// The alpha the p-value is compared against.
    pub fn applicable_alpha(&self) -> T {
        self.alpha_adjusted.unwrap_or(self.alpha)
    }
}

/// Bonferroni-adjusted significance level; `comparisons` of 0 is treated as 1.
pub fn bonferroni<T: Scalar>(alpha: T, comparisons: usize) -> T {
    alpha / T::from_usize_lossy(comparisons.max(1))
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha > T::zero() && alpha < T::one() {
        Ok(())
    } else {
        Err(Error::Validation(format!("alpha {alpha} is outside (0, 1)")))
    }
}

fn check_sample<T: Scalar>(values: &[T], what: &str) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{what} needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// One-way ANOVA across `groups`.
///
/// With zero within-group variance the F ratio is 0 (p = 1) when all group means are
/// equal and infinite (p = 0) otherwise.
pub fn one_way_anova<T: Scalar, G: AsRef<[T]>>(groups: &[G], alpha: T) -> Result<TestResult<T>> {
    check_alpha(alpha)?;
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ANOVA needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        check_sample(g.as_ref(), &format!("group {i}"))?;
    }
    let k = groups.len();
    let n_total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let means: Vec<T> = groups.iter().map(|g| mean(g.as_ref())).collect::<Result<_>>()?;
    let grand = groups
        .iter()
        .map(|g| g.as_ref().iter().copied().sum::<T>())
        .sum::<T>()
        / T::from_usize_lossy(n_total);
    let equal_means = means.iter().all(|m| *m == means[0]);
    let ssb: T = if equal_means {
        T::zero()
    } else {
        groups
            .iter()
            .zip(&means)
            .map(|(g, m)| T::from_usize_lossy(g.as_ref().len()) * (*m - grand) * (*m - grand))
            .sum()
    };
    let ssw: T = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.as_ref().iter().map(|v| (*v - *m) * (*v - *m)).sum::<T>())
        .sum();
    let df_b = T::from_usize_lossy(k - 1);
    let df_w = T::from_usize_lossy(n_total - k);
    let (f, p) = if ssb == T::zero() {
        (T::zero(), T::one())
    } else if ssw == T::zero() {
        (T::infinity(), T::zero())
    } else {
        let f = (ssb / df_b) / (ssw / df_w);
        (f, f_survival(f, df_b, df_w))
    };
    Ok(TestResult::new(TestKind::OneWayAnova, f, p, vec![df_b, df_w], alpha, 1))
}

fn t_from_parts<T: Scalar>(diff: T, se: T) -> (T, bool) {
    if se == T::zero() {
        if diff == T::zero() {
            (T::zero(), true)
        } else {
            (diff.signum() * T::infinity(), true)
        }
    } else {
        (diff / se, false)
    }
}

/// Two-sample t-test (pooled variance by default, Welch on request).
///
/// `comparisons` is the size of the comparison family; for more than one comparison
/// significance is judged against `alpha / comparisons`. Zero variance in both samples
/// gives t = 0, p = 1 for equal means and an infinite t, p = 0 otherwise.
pub fn two_sample_t<T: Scalar>(
    a: &[T],
    b: &[T],
    alpha: T,
    comparisons: usize,
    variant: TVariant,
) -> Result<TestResult<T>> {
    check_alpha(alpha)?;
    check_sample(a, "first sample")?;
    check_sample(b, "second sample")?;
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let (ma, mb) = (mean(a)?, mean(b)?);
    let (va, vb) = (variance(a)?, variance(b)?);
    let one = T::one();
    let pooled_df = na + nb - T::lit(2.0);
    let (se, df, kind) = match variant {
        TVariant::Pooled => {
            let sp2 = ((na - one) * va + (nb - one) * vb) / pooled_df;
            ((sp2 * (one / na + one / nb)).sqrt(), pooled_df, TestKind::PooledT)
        }
        TVariant::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = if se2 == T::zero() {
                pooled_df
            } else {
                se2 * se2 / (qa * qa / (na - one) + qb * qb / (nb - one))
            };
            (se2.sqrt(), df, TestKind::WelchT)
        }
    };
    let diff = ma - mb;
    let (t, degenerate) = t_from_parts(diff, se);
    let p = if degenerate {
        if t == T::zero() {
            T::one()
        } else {
            T::zero()
        }
    } else {
        t_two_sided_p(t, df)
    };
    Ok(TestResult::new(kind, t, p, vec![df], alpha, comparisons))
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t<T: Scalar>(a: &[T], b: &[T], alpha: T, comparisons: usize) -> Result<TestResult<T>> {
    check_alpha(alpha)?;
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    check_sample(a, "first sample")?;
    check_sample(b, "second sample")?;
    let diffs: Vec<T> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
    let n = T::from_usize_lossy(diffs.len());
    let md = mean(&diffs)?;
    let sd = variance(&diffs)?.sqrt();
    let df = n - T::one();
    if sd == T::zero() {
        if md != T::zero() {
            return Err(Error::DegenerateDifferences);
        }
        return Ok(TestResult::new(TestKind::PairedT, T::zero(), T::one(), vec![df], alpha, comparisons));
    }
    let t = md / (sd / n.sqrt());
    Ok(TestResult::new(TestKind::PairedT, t, t_two_sided_p(t, df), vec![df], alpha, comparisons))
}

// ---------------------------------------------------------------------------
// effect sizes

/// Cohen's d: `(mean_a - mean_b) / pooled_sd`.
///
/// Samples with zero pooled spread give 0 when their means agree and
/// [`Error::ZeroPooledSd`] otherwise.
pub fn cohens_d<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_sample(a, "first sample")?;
    check_sample(b, "second sample")?;
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let one = T::one();
    let pooled = (((na - one) * variance(a)? + (nb - one) * variance(b)?) / (na + nb - T::lit(2.0))).sqrt();
    let diff = mean(a)? - mean(b)?;
    if pooled == T::zero() {
        return if diff == T::zero() {
            Ok(T::zero())
        } else {
            Err(Error::ZeroPooledSd)
        };
    }
    Ok(diff / pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EffectBand {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectBand {
    pub fn as_str(&self) -> &'static str {
        match self {
            EffectBand::Negligible => "negligible",
            EffectBand::Small => "small",
            EffectBand::Medium => "medium",
            EffectBand::Large => "large",
        }
    }
}

impl std::fmt::Display for EffectBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How |d| is mapped onto the 0.2 / 0.5 / 0.8 benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandConvention {
    /// Label by the closest benchmark (ties go to the larger band); below 0.1 is negligible.
    #[default]
    Nearest,
    /// Label by the largest benchmark reached; below 0.2 is negligible.
    Threshold,
}

pub fn effect_band<T: Scalar>(d: T, convention: BandConvention) -> EffectBand {
    let x = d.abs().to_f64_lossy();
    match convention {
        BandConvention::Threshold => {
            if x >= 0.8 {
                EffectBand::Large
            } else if x >= 0.5 {
                EffectBand::Medium
            } else if x >= 0.2 {
                EffectBand::Small
            } else {
                EffectBand::Negligible
            }
        }
        BandConvention::Nearest => {
            if x >= 0.65 {
                EffectBand::Large
            } else if x >= 0.35 {
                EffectBand::Medium
            } else if x >= 0.1 {
                EffectBand::Small
            } else {
                EffectBand::Negligible
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize<T> {
    pub d: T,
    pub band: EffectBand,
}

pub fn effect_size<T: Scalar>(a: &[T], b: &[T], convention: BandConvention) -> Result<EffectSize<T>> {
    let d = cohens_d(a, b)?;
    Ok(EffectSize {
        d,
        band: effect_band(d, convention),
    })
}

// ---------------------------------------------------------------------------
// gap and failure-overlap analyses

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport<T> {
    pub semantic_mean: T,
    pub entity_mean: T,
    /// `100 * (semantic_mean - entity_mean)`.
    pub gap_pp: T,
    /// `semantic_mean / entity_mean`; absent when the entity mean is 0.
    pub ratio: Option<T>,
}

impl<T: Scalar> GapReport<T> {
    pub fn from_means(semantic_mean: T, entity_mean: T) -> Self {
        Self {
            semantic_mean,
            entity_mean,
            gap_pp: T::lit(100.0) * (semantic_mean - entity_mean),
            ratio: (entity_mean > T::zero()).then(|| semantic_mean / entity_mean),
        }
    }
}

pub fn gap_analysis<T: Scalar>(semantic: &[T], entity: &[T]) -> Result<GapReport<T>> {
    Ok(GapReport::from_means(mean(semantic)?, mean(entity)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureOverlap<T> {
    pub n: usize,
    /// Semantic at or above the "high" cutoff while entity F1 fails.
    pub high_semantic_low_entity: usize,
    /// Semantic at or above the "high" cutoff while factual consistency fails.
    pub high_semantic_low_factual: usize,
    pub high_semantic_low_entity_fraction: T,
    pub high_semantic_low_factual_fraction: T,
}

/// Counts samples that look fluent (semantic ≥ `high_semantic`) yet fail entity or
/// factual thresholds.
pub fn failure_overlap<T: Scalar>(
    components: &[ComponentScores<T>],
    thresholds: &FailureThresholds<T>,
    high_semantic: T,
) -> Result<FailureOverlap<T>> {
    if components.is_empty() {
        return Err(Error::EmptyInput);
    }
    let high: Vec<&ComponentScores<T>> = components
        .iter()
        .filter(|c| c.semantic_similarity >= high_semantic)
        .collect();
    let low_e = high.iter().filter(|c| c.entity_f1 < thresholds.entity).count();
    let low_f = high
        .iter()
        .filter(|c| c.factual_consistency < thresholds.factual)
        .count();
    let n = T::from_usize_lossy(components.len());
    Ok(FailureOverlap {
        n: components.len(),
        high_semantic_low_entity: low_e,
        high_semantic_low_factual: low_f,
        high_semantic_low_entity_fraction: T::from_usize_lossy(low_e) / n,
        high_semantic_low_factual_fraction: T::from_usize_lossy(low_f) / n,
    })
}

pub fn failure_overlap_results(
    results: &[VBScoreResult],
    thresholds: &FailureThresholds<f64>,
    high_semantic: f64,
) -> Result<FailureOverlap<f64>> {
    let comps: Vec<ComponentScores<f64>> = results.iter().map(|r| r.components).collect();
    failure_overlap(&comps, thresholds, high_semantic)
}

// ---------------------------------------------------------------------------
// stratified comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumKey {
    Source,
    QuestionType,
    DiseaseCategory,
}

impl StratumKey {
    pub const ALL: [StratumKey; 3] = [
        StratumKey::Source,
        StratumKey::QuestionType,
        StratumKey::DiseaseCategory,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StratumKey::Source => "source",
            StratumKey::QuestionType => "question_type",
            StratumKey::DiseaseCategory => "disease_category",
        }
    }

    /// Stratum labels in declaration order.
    pub fn labels(&self) -> Vec<&'static str> {
        use crate::datamodel::{DiseaseCategory, QuestionType, Source};
        match self {
            StratumKey::Source => Source::ALL.iter().map(|s| s.as_str()).collect(),
            StratumKey::QuestionType => QuestionType::ALL.iter().map(|s| s.as_str()).collect(),
            StratumKey::DiseaseCategory => DiseaseCategory::ALL.iter().map(|s| s.as_str()).collect(),
        }
    }

    pub fn label_of(&self, record: &QARecord) -> &'static str {
        match self {
            StratumKey::Source => record.source.as_str(),
            StratumKey::QuestionType => record.question_type.as_str(),
            StratumKey::DiseaseCategory => record.disease_category.as_str(),
        }
    }
}

/// Relative gap in percent, `100 * (a - b) / b`; absent when `b` is 0.
pub fn relative_gap_pct<T: Scalar>(a: T, b: T) -> Option<T> {
    (b != T::zero()).then(|| T::lit(100.0) * (a - b) / b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary<T> {
    pub label: String,
    pub summary: DescriptiveSummary<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport<T> {
    pub strata: Vec<StratumSummary<T>>,
    /// The two largest strata, in declaration order.
    pub compared: (String, String),
    pub relative_gap_pct: Option<T>,
    /// Absent when either compared stratum has fewer than 2 values.
    pub test: Option<TestResult<T>>,
    /// Absent when the test is absent or the pooled spread is zero with differing means.
    pub effect: Option<EffectSize<T>>,
}

/// Summarizes each nonempty stratum and compares the two largest.
///
/// `strata` is in declaration order; among equally large strata the earlier one wins,
/// and the relative gap is taken as earlier over later.
pub fn stratified_compare<T: Scalar>(
    strata: &[(String, Vec<T>)],
    alpha: T,
    variant: TVariant,
    convention: BandConvention,
) -> Result<StratifiedReport<T>> {
    let present: Vec<(usize, &(String, Vec<T>))> =
        strata.iter().enumerate().filter(|(_, s)| !s.1.is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::SingleStratum);
    }
    let summaries = present
        .iter()
        .map(|(_, (label, v))| {
            Ok(StratumSummary {
                label: label.clone(),
                summary: describe(v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut by_size = present.clone();
    by_size.sort_by(|x, y| y.1 .1.len().cmp(&x.1 .1.len()).then(x.0.cmp(&y.0)));
    let (mut first, mut second) = (by_size[0], by_size[1]);
    if second.0 < first.0 {
        std::mem::swap(&mut first, &mut second);
    }
    let (a, b) = (&first.1 .1, &second.1 .1);
    let gap = relative_gap_pct(mean(a)?, mean(b)?);
    let (test, effect) = if a.len() >= 2 && b.len() >= 2 {
        (
            Some(two_sample_t(a, b, alpha, 1, variant)?),
            effect_size(a, b, convention).ok(),
        )
    } else {
        (None, None)
    };
    Ok(StratifiedReport {
        strata: summaries,
        compared: (first.1 .0.clone(), second.1 .0.clone()),
        relative_gap_pct: gap,
        test,
        effect,
    })
}

/// Groups VB-Scores by stratum label, in declaration order, using `dataset` to look up
/// each sample's stratum. Results whose sample is missing from `dataset` are skipped.
pub fn group_by_stratum(
    results: &[VBScoreResult],
    dataset: &[QARecord],
    key: StratumKey,
) -> Vec<(String, Vec<f64>)> {
    let lookup: std::collections::HashMap<&str, &QARecord> =
        dataset.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut groups: Vec<(String, Vec<f64>)> =
        key.labels().into_iter().map(|l| (l.to_string(), Vec::new())).collect();
    for r in results {
        if let Some(rec) = lookup.get(r.sample_id.as_str()) {
            let label = key.label_of(rec);
            if let Some(g) = groups.iter_mut().find(|g| g.0 == label) {
                g.1.push(r.vb_score);
            }
        }
    }
    groups
}
