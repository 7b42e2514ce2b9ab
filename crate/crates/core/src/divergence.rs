//! Weighted divergence between the expected and the observed situation.
//!
//! Every instance-level difference gets a cost in [0, 1] and a weight from a
//! per-(concept, operation) table; the divergence total is the plain sum of
//! weight times cost over all differences. A separate mapping classifies the
//! difference set into the design level a redesign would have to re-enter:
//! partner/risk/objective changes cut deepest (situation definition), service
//! and resource changes sit in the middle (cartography), and pure
//! endpoint/binding edits on services are deployment-only. Classification
//! picks the deepest level over all differences.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{Concept, DiffOp, Difference};

// ===========================================================================
// Weights
// ===========================================================================

/// Weight lookup by (concept, operation), with a default for everything
/// unlisted. All weights are finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    default_weight: f64,
    entries: BTreeMap<(Concept, DiffOp), f64>,
}

impl WeightTable {
    /// Same weight for every difference.
    pub fn uniform(weight: f64) -> Result<WeightTable, WeightError> {
        check_weight(weight)?;
        Ok(WeightTable { default_weight: weight, entries: BTreeMap::new() })
    }

    pub fn with_entry(
        mut self,
        concept: Concept,
        operation: DiffOp,
        weight: f64,
    ) -> Result<WeightTable, WeightError> {
        check_weight(weight)?;
        self.entries.insert((concept, operation), weight);
        Ok(self)
    }

    /// Profile tuned for crisis collaborations: new risks and departing
    /// partners weigh double, while a disappearing risk or an extra partner
    /// weighs half. Everything else keeps weight 1.
    pub fn crisis_profile() -> WeightTable {
        WeightTable::uniform(1.0)
            .and_then(|t| t.with_entry(Concept::Risk, DiffOp::Added, 2.0))
            .and_then(|t| t.with_entry(Concept::Risk, DiffOp::Deleted, 0.5))
            .and_then(|t| t.with_entry(Concept::Partner, DiffOp::Deleted, 2.0))
            .and_then(|t| t.with_entry(Concept::Partner, DiffOp::Added, 0.5))
            .expect("constant weights are valid")
    }

    pub fn weight(&self, concept: &Concept, operation: DiffOp) -> f64 {
        self.entries
            .get(&(concept.clone(), operation))
            .copied()
            .unwrap_or(self.default_weight)
    }

    pub fn default_weight(&self) -> f64 {
        self.default_weight
    }

    /// Multiplies every weight (entries and default) by `k`. Scaling the
    /// threshold by the same factor leaves all triggering decisions intact.
    pub fn scaled(&self, k: f64) -> Result<WeightTable, WeightError> {
        let mut scaled = WeightTable::uniform(self.default_weight * k)?;
        for ((concept, operation), weight) in &self.entries {
            scaled = scaled.with_entry(concept.clone(), *operation, weight * k)?;
        }
        Ok(scaled)
    }
}

impl Default for WeightTable {
    fn default() -> WeightTable {
        WeightTable::uniform(1.0).expect("1.0 is a valid weight")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("weight {0} is not a finite non-negative number")]
    InvalidWeight(f64),
    #[error("duplicate weight entry for ({concept}, {operation})")]
    DuplicateEntry { concept: Concept, operation: DiffOp },
}

fn check_weight(weight: f64) -> Result<(), WeightError> {
    if !weight.is_finite() || weight < 0.0 {
        return Err(WeightError::InvalidWeight(weight));
    }
    Ok(())
}

// serde shape, also the weight-profile file format:
// {"default": 1.0, "entries": [{"concept": ..., "operation": ..., "weight": ...}]}
#[derive(Serialize, Deserialize)]
struct WeightTableRepr {
    default: f64,
    #[serde(default)]
    entries: Vec<WeightEntryRepr>,
}

#[derive(Serialize, Deserialize)]
struct WeightEntryRepr {
    concept: Concept,
    operation: DiffOp,
    weight: f64,
}

impl Serialize for WeightTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        WeightTableRepr {
            default: self.default_weight,
            entries: self
                .entries
                .iter()
                .map(|((concept, operation), weight)| WeightEntryRepr {
                    concept: concept.clone(),
                    operation: *operation,
                    weight: *weight,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for WeightTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = WeightTableRepr::deserialize(deserializer)?;
        let mut table = WeightTable::uniform(repr.default).map_err(D::Error::custom)?;
        for entry in repr.entries {
            if table.entries.contains_key(&(entry.concept.clone(), entry.operation)) {
                return Err(D::Error::custom(WeightError::DuplicateEntry {
                    concept: entry.concept,
                    operation: entry.operation,
                }));
            }
            table = table
                .with_entry(entry.concept, entry.operation, entry.weight)
                .map_err(D::Error::custom)?;
        }
        Ok(table)
    }
}

// ===========================================================================
// Costs
// ===========================================================================

/// How much a single difference counts before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Every difference costs 1.
    #[default]
    Unit,
    /// Updates cost the changed fraction of the instance's attributes;
    /// additions and deletions still cost 1.
    Proportional,
}

/// Cost of one difference in [0, 1].
pub fn instance_cost(difference: &Difference, mode: CostMode) -> f64 {
    match (mode, difference.operation) {
        (CostMode::Unit, _) => 1.0,
        (CostMode::Proportional, DiffOp::Added | DiffOp::Deleted) => 1.0,
        (CostMode::Proportional, DiffOp::Updated) => {
            if difference.attr_total == 0 {
                return 1.0;
            }
            let ratio = difference.changed_attributes.len() as f64 / difference.attr_total as f64;
            ratio.clamp(0.0, 1.0)
        }
    }
}

// ===========================================================================
// Redesign levels
// ===========================================================================

/// Design level a redesign would re-enter, ordered deepest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedesignLevel {
    /// Level 1: the situation definition itself changed.
    Situation,
    /// Level 2: the service/resource cartography changed.
    Cartography,
    /// Level 3: only deployment details (service endpoints/bindings) changed.
    Deployment,
    /// No differences, nothing to redesign.
    None,
}

impl RedesignLevel {
    pub fn as_int(self) -> Option<u8> {
        match self {
            RedesignLevel::Situation => Some(1),
            RedesignLevel::Cartography => Some(2),
            RedesignLevel::Deployment => Some(3),
            RedesignLevel::None => None,
        }
    }

    pub fn from_int(level: u8) -> Option<RedesignLevel> {
        match level {
            1 => Some(RedesignLevel::Situation),
            2 => Some(RedesignLevel::Cartography),
            3 => Some(RedesignLevel::Deployment),
            _ => None,
        }
    }
}

impl std::fmt::Display for RedesignLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RedesignLevel::Situation => f.write_str("situation"),
            RedesignLevel::Cartography => f.write_str("cartography"),
            RedesignLevel::Deployment => f.write_str("deployment"),
            RedesignLevel::None => f.write_str("none"),
        }
    }
}

/// Overrides for the built-in difference classification, keyed by
/// (concept, operation).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NatureTable {
    overrides: BTreeMap<(Concept, DiffOp), RedesignLevel>,
}

impl NatureTable {
    pub fn with_override(
        mut self,
        concept: Concept,
        operation: DiffOp,
        level: RedesignLevel,
    ) -> NatureTable {
        self.overrides.insert((concept, operation), level);
        self
    }

    fn classify_one(&self, difference: &Difference) -> RedesignLevel {
        if let Some(level) = self.overrides.get(&(difference.key.concept.clone(), difference.operation)) {
            return *level;
        }
        match &difference.key.concept {
            Concept::Partner | Concept::Risk | Concept::Objective => RedesignLevel::Situation,
            Concept::Service
                if difference.operation == DiffOp::Updated
                    && difference
                        .changed_attributes
                        .iter()
                        .all(|name| name == "endpoint" || name == "binding") =>
            {
                RedesignLevel::Deployment
            }
            _ => RedesignLevel::Cartography,
        }
    }
}

// serde shape: [{"concept": ..., "operation": ..., "level": 1|2|3}]
#[derive(Serialize, Deserialize)]
struct NatureEntryRepr {
    concept: Concept,
    operation: DiffOp,
    level: u8,
}

impl Serialize for NatureTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.overrides
            .iter()
            .map(|((concept, operation), level)| NatureEntryRepr {
                concept: concept.clone(),
                operation: *operation,
                level: level.as_int().expect("overrides never store None"),
            })
            .collect::<Vec<_>>()
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NatureTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = Vec::<NatureEntryRepr>::deserialize(deserializer)?;
        let mut table = NatureTable::default();
        for entry in entries {
            let level = RedesignLevel::from_int(entry.level)
                .ok_or_else(|| D::Error::custom(format!("redesign level must be 1..=3, got {}", entry.level)))?;
            table = table.with_override(entry.concept, entry.operation, level);
        }
        Ok(table)
    }
}

/// Deepest redesign level required by a difference set; `None` when empty.
pub fn classify_nature(differences: &[Difference], table: &NatureTable) -> RedesignLevel {
    differences
        .iter()
        .map(|d| table.classify_one(d))
        .min_by_key(|level| level.as_int().expect("per-difference levels are never None"))
        .unwrap_or(RedesignLevel::None)
}

// ===========================================================================
// Reports
// ===========================================================================

/// Scoring policy: weights, cost mode, and classification overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DivergencePolicy {
    pub weights: WeightTable,
    pub cost_mode: CostMode,
    pub nature: NatureTable,
}

/// One scored difference.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub difference: Difference,
    pub cost: f64,
    pub weight: f64,
    pub weighted: f64,
}

/// Outcome of scoring a difference set at one logical instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub total: f64,
    pub contributions: Vec<Contribution>,
    pub level: RedesignLevel,
    pub evaluated_at: u64,
}

impl DivergenceReport {
    /// Strict comparison: a total exactly at the threshold does not trigger.
    pub fn exceeds(&self, threshold: f64) -> bool {
        self.total > threshold
    }
}

/// Scores a difference set: cost times weight per difference, summed in
/// input order. An empty set yields total 0 and level `None`.
pub fn compute_divergence(
    differences: &[Difference],
    policy: &DivergencePolicy,
    evaluated_at: u64,
) -> DivergenceReport {
    let mut contributions = Vec::with_capacity(differences.len());
    let mut total = 0.0;
    for difference in differences {
        let cost = instance_cost(difference, policy.cost_mode);
        let weight = policy.weights.weight(&difference.key.concept, difference.operation);
        let weighted = weight * cost;
        total += weighted;
        contributions.push(Contribution { difference: difference.clone(), cost, weight, weighted });
    }
    DivergenceReport {
        total,
        contributions,
        level: classify_nature(differences, &policy.nature),
        evaluated_at,
    }
}

/// One divergence-timeline line, as written to `divergence.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub ts: u64,
    pub total: f64,
    pub level: Option<u8>,
    pub triggered: bool,
    pub n_diffs: usize,
}

impl TimelineRow {
    pub fn new(report: &DivergenceReport, triggered: bool) -> TimelineRow {
        TimelineRow {
            ts: report.evaluated_at,
            total: report.total,
            level: report.level.as_int(),
            triggered,
            n_diffs: report.contributions.len(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("timeline row serialization")
    }
}

// ===========================================================================
// Tests
// ===========================================================================
