//! VB-Score composition, failure classification and weight-sensitivity ranking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{ComponentScores, FailureFlag};
use crate::error::{Error, Result};
use crate::scalar::{clamp_unit, in_unit, Scalar};

/// Named nonnegative weights over the four components, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme<T> {
    pub name: String,
    pub entity: T,
    pub semantic: T,
    pub factual: T,
    pub structured: T,
}

impl<T: Scalar> WeightScheme<T> {
    pub fn new(name: impl Into<String>, entity: T, semantic: T, factual: T, structured: T) -> Result<Self> {
        let s = Self {
            name: name.into(),
            entity,
            semantic,
            factual,
            structured,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidScheme {
            name: self.name.clone(),
            reason,
        };
        if self.name.trim().is_empty() {
            return Err(invalid("empty name".into()));
        }
        for w in self.weights() {
            if !w.is_finite() || w < T::zero() {
                return Err(invalid(format!("weight {w} is negative or not finite")));
            }
        }
        let sum: T = self.weights().into_iter().sum();
        if (sum - T::one()).abs() > T::weight_tolerance() {
            return Err(invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn weights(&self) -> [T; 4] {
        [self.entity, self.semantic, self.factual, self.structured]
    }
}

/// The five shipped schemes.
pub mod presets {
    use super::WeightScheme;
    use crate::scalar::Scalar;

    fn make<T: Scalar>(name: &str, w: [f64; 4]) -> WeightScheme<T> {
        WeightScheme {
            name: name.into(),
            entity: T::lit(w[0]),
            semantic: T::lit(w[1]),
            factual: T::lit(w[2]),
            structured: T::lit(w[3]),
        }
    }

    /// Default VB-Score weights.
    pub fn vb<T: Scalar>() -> WeightScheme<T> {
        make("vb", [0.30, 0.30, 0.25, 0.15])
    }

    pub fn equal<T: Scalar>() -> WeightScheme<T> {
        make("equal", [0.25, 0.25, 0.25, 0.25])
    }

    pub fn entity<T: Scalar>() -> WeightScheme<T> {
        make("entity", [0.50, 0.20, 0.20, 0.10])
    }

    pub fn safety<T: Scalar>() -> WeightScheme<T> {
        make("safety", [0.20, 0.20, 0.45, 0.15])
    }

    pub fn semantic<T: Scalar>() -> WeightScheme<T> {
        make("semantic", [0.20, 0.50, 0.20, 0.10])
    }

    pub fn all<T: Scalar>() -> Vec<WeightScheme<T>> {
        vec![vb(), equal(), entity(), safety(), semantic()]
    }

    pub fn by_name<T: Scalar>(name: &str) -> Option<WeightScheme<T>> {
        all().into_iter().find(|s| s.name == name)
    }
}

/// Per-component cutoffs; a value strictly below its cutoff is a failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureThresholds<T> {
    pub entity: T,
    pub semantic: T,
    pub factual: T,
    pub structured: T,
    pub overall: T,
}

impl<T: Scalar> Default for FailureThresholds<T> {
    fn default() -> Self {
        Self {
            entity: T::lit(0.10),
            semantic: T::lit(0.30),
            factual: T::lit(0.50),
            structured: T::lit(0.10),
            overall: T::lit(0.20),
        }
    }
}

impl<T: Scalar> FailureThresholds<T> {
    pub fn validate(&self) -> Result<()> {
        for v in [self.entity, self.semantic, self.factual, self.structured, self.overall] {
            if !(v > T::zero() && v < T::one()) {
                return Err(Error::InvalidThresholds(format!("{v} is outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Weighted linear combination of the components, clamped into `[0, 1]` to absorb
/// rounding in the weight sum.
pub fn compose_vb<T: Scalar>(c: &ComponentScores<T>, scheme: &WeightScheme<T>) -> T {
    let raw = scheme.entity * c.entity_f1
        + scheme.semantic * c.semantic_similarity
        + scheme.factual * c.factual_consistency
        + scheme.structured * c.structured_overlap;
    clamp_unit(raw)
}

pub fn classify_failures<T: Scalar>(
    c: &ComponentScores<T>,
    vb_score: T,
    thresholds: &FailureThresholds<T>,
) -> BTreeSet<FailureFlag> {
    let checks = [
        (c.entity_f1, thresholds.entity, FailureFlag::EntityFail),
        (c.semantic_similarity, thresholds.semantic, FailureFlag::SemanticFail),
        (c.factual_consistency, thresholds.factual, FailureFlag::FactualFail),
        (c.structured_overlap, thresholds.structured, FailureFlag::StructureFail),
        (vb_score, thresholds.overall, FailureFlag::SystemicFail),
    ];
    checks
        .into_iter()
        .filter(|(v, t, _)| v < t)
        .map(|(_, _, f)| f)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel<T> {
    pub model_id: String,
    pub score: T,
    /// Competition rank: tied models share the rank of the first of them.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking<T> {
    pub scheme: String,
    pub order: Vec<RankedModel<T>>,
    /// Groups of model ids whose scores are tied.
    pub ties: Vec<Vec<String>>,
}

impl<T: Scalar> Ranking<T> {
    pub fn model_order(&self) -> Vec<&str> {
        self.order.iter().map(|m| m.model_id.as_str()).collect()
    }
}

fn tied<T: Scalar>(a: T, b: T) -> bool {
    let scale = a.abs().max(b.abs()).max(T::one());
    (a - b).abs() <= T::lit(1e-12) * scale
}

/// Orders models by score descending; ties fall back to model id and are reported.
pub fn rank_scores<T: Scalar>(scheme: &str, scores: &BTreeMap<String, T>) -> Ranking<T> {
    let mut entries: Vec<(&String, T)> = scores.iter().map(|(k, v)| (k, *v)).collect();
    entries.sort_by(|a, b| {
        if tied(a.1, b.1) {
            a.0.cmp(b.0)
        } else {
            b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal)
        }
    });
    let mut order: Vec<RankedModel<T>> = Vec::with_capacity(entries.len());
    let mut ties: Vec<Vec<String>> = Vec::new();
    for (i, (id, score)) in entries.iter().enumerate() {
        let rank = match order.last() {
            Some(prev) if tied(prev.score, *score) => {
                match ties.last_mut() {
                    Some(group) if group.contains(&prev.model_id) => group.push((*id).clone()),
                    _ => ties.push(vec![prev.model_id.clone(), (*id).clone()]),
                }
                prev.rank
            }
            _ => i + 1,
        };
        order.push(RankedModel {
            model_id: (*id).clone(),
            score: *score,
            rank,
        });
    }
    Ranking {
        scheme: scheme.to_string(),
        order,
        ties,
    }
}

/// Ranks models under each scheme by their composed mean components.
pub fn rank_models<T: Scalar>(
    model_means: &BTreeMap<String, ComponentScores<T>>,
    schemes: &[WeightScheme<T>],
) -> Vec<Ranking<T>> {
    schemes
        .iter()
        .map(|scheme| {
            let scores: BTreeMap<String, T> = model_means
                .iter()
                .map(|(m, c)| (m.clone(), compose_vb(c, scheme)))
                .collect();
            rank_scores(&scheme.name, &scores)
        })
        .collect()
}

/// Checks that every scheme in `schemes` is valid and components lie in `[0, 1]`.
pub fn check_inputs<T: Scalar>(c: &ComponentScores<T>, scheme: &WeightScheme<T>) -> Result<()> {
    scheme.validate()?;
    if c.as_array().into_iter().all(in_unit) {
        Ok(())
    } else {
        Err(Error::Validation("component outside [0, 1]".into()))
    }
}
