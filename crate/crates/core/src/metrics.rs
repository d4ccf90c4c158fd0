//! Entropy, max-gap, helpfulness and constraint satisfaction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrib::{attribute_distribution, Attribute, AttributeDistribution, EntityMention, Lexicon};
use crate::dataset::{Constraint, Prompt};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty record list")]
    Empty,
    #[error("records mix methods {0:?} and {1:?}")]
    MixedMethods(String, String),
    #[error("constraint attribute {0:?} is not part of the lexicon schema")]
    UnknownConstraintAttribute(String),
}

/// Shannon entropy in bits; `0 log 0` is 0 and an empty distribution scores 0.
pub fn entropy(dist: &AttributeDistribution) -> f64 {
    let h: f64 = dist
        .probs
        .values()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    // Avoid reporting -0.0 for point masses.
    h.max(0.0)
}

/// Largest pairwise difference over the value set, absent values counting
/// as zero. An empty distribution scores 1 (no diversity).
pub fn max_gap(dist: &AttributeDistribution, value_set: &[String]) -> f64 {
    if dist.probs.is_empty() {
        return 1.0;
    }
    let prob = |v: &str| dist.probs.get(v).copied().unwrap_or(0.0);
    let values = value_set
        .iter()
        .map(|v| prob(v))
        .chain(dist.probs.iter().filter(|(k, _)| !value_set.contains(k)).map(|(_, &p)| p));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
    (hi - lo).clamp(0.0, 1.0)
}

/// Fraction of mentions with a known value for the constrained attribute
/// whose value matches. Zero when nothing is known.
pub fn constraint_satisfaction(mentions: &[EntityMention], constraint: &Constraint) -> Result<f64, MetricsError> {
    let attribute: Attribute = constraint
        .attribute
        .parse()
        .map_err(|_| MetricsError::UnknownConstraintAttribute(constraint.attribute.clone()))?;
    let known: Vec<&str> = mentions.iter().filter_map(|m| m.value(attribute)).collect();
    if known.is_empty() {
        return Ok(0.0);
    }
    let hits = known
        .iter()
        .filter(|v| v.eq_ignore_ascii_case(&constraint.value))
        .count();
    Ok(hits as f64 / known.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub entropy: f64,
    pub max_gap: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub prompt_id: String,
    pub method: String,
    pub attributes: BTreeMap<Attribute, AttributeScore>,
    pub is_helpful: u8,
    pub n_mentions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_satisfaction: Option<f64>,
    /// The transcript behind this record failed; scored as unhelpful.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl MetricsRecord {
    pub fn entropy(&self, attribute: Attribute) -> Option<f64> {
        self.attributes.get(&attribute).map(|s| s.entropy)
    }

    pub fn max_gap(&self, attribute: Attribute) -> Option<f64> {
        self.attributes.get(&attribute).map(|s| s.max_gap)
    }
}

/// Scores one final response.
///
/// A response with no person mentions is unhelpful and gets entropy 0 and
/// max-gap 1 on every attribute.
pub fn score_response(
    prompt: &Prompt,
    method: &str,
    final_response: &str,
    lexicon: &Lexicon,
    attributes: &[Attribute],
) -> Result<MetricsRecord, MetricsError> {
    score_text(&prompt.id, method, final_response, prompt.constraint.as_ref(), lexicon, attributes)
}

pub fn score_text(
    prompt_id: &str,
    method: &str,
    text: &str,
    constraint: Option<&Constraint>,
    lexicon: &Lexicon,
    attributes: &[Attribute],
) -> Result<MetricsRecord, MetricsError> {
    let mentions = lexicon.extract_people(text);
    let helpful = !mentions.is_empty();
    let scores = attributes
        .iter()
        .map(|&attr| {
            let dist = attribute_distribution(&mentions, attr);
            let score = if helpful {
                AttributeScore {
                    entropy: entropy(&dist),
                    max_gap: max_gap(&dist, &lexicon.value_set(attr)),
                    coverage: dist.coverage(),
                }
            } else {
                AttributeScore {
                    entropy: 0.0,
                    max_gap: 1.0,
                    coverage: 0.0,
                }
            };
            (attr, score)
        })
        .collect();
    let constraint_satisfaction = constraint
        .map(|c| constraint_satisfaction(&mentions, c))
        .transpose()?;
    Ok(MetricsRecord {
        prompt_id: prompt_id.to_string(),
        method: method.to_string(),
        attributes: scores,
        is_helpful: helpful as u8,
        n_mentions: mentions.len(),
        constraint_satisfaction,
        failed: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub entropy: BTreeMap<Attribute, f64>,
    pub max_gap: BTreeMap<Attribute, f64>,
    pub is_helpful: f64,
    pub n_prompts: usize,
    pub n_failed: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Unweighted means over all records of one method.
pub fn aggregate(records: &[MetricsRecord]) -> Result<SummaryRow, MetricsError> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    if let Some(other) = records.iter().find(|r| r.method != first.method) {
        return Err(MetricsError::MixedMethods(first.method.clone(), other.method.clone()));
    }
    let attrs: Vec<Attribute> = first.attributes.keys().copied().collect();
    let per_attr = |f: fn(&AttributeScore) -> f64| -> BTreeMap<Attribute, f64> {
        attrs
            .iter()
            .map(|a| (*a, mean(records.iter().filter_map(|r| r.attributes.get(a)).map(f))))
            .collect()
    };
    Ok(SummaryRow {
        method: first.method.clone(),
        entropy: per_attr(|s| s.entropy),
        max_gap: per_attr(|s| s.max_gap),
        is_helpful: mean(records.iter().map(|r| r.is_helpful as f64)),
        n_prompts: records.len(),
        n_failed: records.iter().filter(|r| r.failed).count(),
    })
}

/// Groups records by method (first-seen order) and aggregates each group.
pub fn summarize_by_method(records: &[MetricsRecord]) -> Result<Vec<SummaryRow>, MetricsError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<MetricsRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(&r.method) {
            order.push(r.method.clone());
        }
        groups.entry(r.method.clone()).or_default().push(r.clone());
    }
    order.iter().map(|m| aggregate(&groups[m])).collect()
}
