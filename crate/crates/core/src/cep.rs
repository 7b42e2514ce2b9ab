//! Complex event processing: turning co-occurring simple events into
//! higher-level events.
//!
//! Rules watch the stream for conjunctions (`AllOf`), ordered chains
//! (`SequenceOf`), or repetition (`CountOf`) of event types inside a sliding
//! time window. When a pattern completes, the engine emits one complex event
//! carrying the rule's effect template and the merged payloads of its
//! constituents, and consumes those constituents so no event feeds two
//! matches of the same rule. The engine never republishes anything itself;
//! the driver decides where emitted events go.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::event::{Event, EventSource, SeqCounter};
use crate::model::{ModelEffect, Scalar};

// ===========================================================================
// Patterns and rules
// ===========================================================================

/// Shape of the constituent set a rule waits for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternKind {
    /// Every listed type at least once, in any order.
    All(BTreeSet<String>),
    /// The listed types in order, strictly increasing (timestamp, seq).
    Sequence(Vec<String>),
    /// `n` occurrences of one type.
    Count { event_type: String, n: usize },
}

impl PatternKind {
    fn involves(&self, event_type: &str) -> bool {
        match self {
            PatternKind::All(types) => types.contains(event_type),
            PatternKind::Sequence(types) => types.iter().any(|t| t == event_type),
            PatternKind::Count { event_type: t, .. } => t == event_type,
        }
    }

    fn input_types(&self) -> BTreeSet<&str> {
        match self {
            PatternKind::All(types) => types.iter().map(String::as_str).collect(),
            PatternKind::Sequence(types) => types.iter().map(String::as_str).collect(),
            PatternKind::Count { event_type, .. } => BTreeSet::from([event_type.as_str()]),
        }
    }
}

/// A pattern plus the sliding window it must complete within.
///
/// The window is half-open: a constituent whose timestamp is exactly
/// `now - window_ms` has already expired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CepPattern {
    pub kind: PatternKind,
    pub window_ms: u64,
}

impl CepPattern {
    pub fn all_of<I, S>(types: I, window_ms: u64) -> Result<CepPattern, CepError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let types: BTreeSet<String> = types.into_iter().map(Into::into).collect();
        if types.len() < 2 {
            return Err(CepError::InvalidPattern("AllOf needs at least two distinct types".into()));
        }
        Self::windowed(PatternKind::All(types), window_ms)
    }

    pub fn sequence_of<I, S>(types: I, window_ms: u64) -> Result<CepPattern, CepError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        if types.len() < 2 {
            return Err(CepError::InvalidPattern("SequenceOf needs at least two steps".into()));
        }
        Self::windowed(PatternKind::Sequence(types), window_ms)
    }

    pub fn count_of(event_type: impl Into<String>, n: usize, window_ms: u64) -> Result<CepPattern, CepError> {
        if n < 2 {
            return Err(CepError::InvalidPattern("CountOf needs n >= 2".into()));
        }
        Self::windowed(PatternKind::Count { event_type: event_type.into(), n }, window_ms)
    }

    fn windowed(kind: PatternKind, window_ms: u64) -> Result<CepPattern, CepError> {
        if window_ms == 0 {
            return Err(CepError::InvalidPattern("window_ms must be positive".into()));
        }
        Ok(CepPattern { kind, window_ms })
    }
}

/// Event class stamped onto a rule's output, deciding which situation model
/// the emitted event's effects will update downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSource {
    Field,
    Monitoring,
}

impl From<OutputSource> for EventSource {
    fn from(value: OutputSource) -> EventSource {
        match value {
            OutputSource::Field => EventSource::Field,
            OutputSource::Monitoring => EventSource::Monitoring,
        }
    }
}

/// One correlation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CepRule {
    pub rule_id: String,
    pub pattern: CepPattern,
    pub output_type: String,
    pub output_source: OutputSource,
    pub effect_template: Vec<ModelEffect>,
}

impl CepRule {
    pub fn new(
        rule_id: impl Into<String>,
        pattern: CepPattern,
        output_type: impl Into<String>,
        output_source: OutputSource,
        effect_template: Vec<ModelEffect>,
    ) -> Result<CepRule, CepError> {
        let rule_id = rule_id.into();
        let output_type = output_type.into();
        if pattern.kind.involves(&output_type) {
            return Err(CepError::InvalidRule {
                rule_id,
                reason: format!("output type '{output_type}' is also an input type"),
            });
        }
        Ok(CepRule { rule_id, pattern, output_type, output_source, effect_template })
    }
}

// serde shape, also the rule-file format:
// {"rule_id": ..., "pattern": {"kind": "all"|"seq"|"count", "types": [...],
//  "n": ..., "window_ms": ...}, "output_type": ..., "output_source": ...,
//  "effects": [...]}
#[derive(Serialize, Deserialize)]
struct RuleRepr {
    rule_id: String,
    pattern: PatternRepr,
    output_type: String,
    output_source: OutputSource,
    #[serde(default)]
    effects: Vec<ModelEffect>,
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    types: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    window_ms: u64,
}

impl Serialize for CepRule {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let pattern = match &self.pattern.kind {
            PatternKind::All(types) => PatternRepr {
                kind: "all".into(),
                types: types.iter().cloned().collect(),
                n: None,
                window_ms: self.pattern.window_ms,
            },
            PatternKind::Sequence(types) => PatternRepr {
                kind: "seq".into(),
                types: types.clone(),
                n: None,
                window_ms: self.pattern.window_ms,
            },
            PatternKind::Count { event_type, n } => PatternRepr {
                kind: "count".into(),
                types: vec![event_type.clone()],
                n: Some(*n),
                window_ms: self.pattern.window_ms,
            },
        };
        RuleRepr {
            rule_id: self.rule_id.clone(),
            pattern,
            output_type: self.output_type.clone(),
            output_source: self.output_source,
            effects: self.effect_template.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CepRule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = RuleRepr::deserialize(deserializer)?;
        let window = repr.pattern.window_ms;
        let pattern = match repr.pattern.kind.as_str() {
            "all" => CepPattern::all_of(repr.pattern.types, window),
            "seq" => CepPattern::sequence_of(repr.pattern.types, window),
            "count" => {
                let event_type = repr.pattern.types.first().cloned().ok_or_else(|| {
                    D::Error::custom("count pattern needs exactly one entry in 'types'")
                })?;
                let n = repr
                    .pattern
                    .n
                    .ok_or_else(|| D::Error::custom("count pattern needs 'n'"))?;
                CepPattern::count_of(event_type, n, window)
            }
            other => return Err(D::Error::custom(format!("unknown pattern kind '{other}'"))),
        }
        .map_err(D::Error::custom)?;
        CepRule::new(repr.rule_id, pattern, repr.output_type, repr.output_source, repr.effects)
            .map_err(D::Error::custom)
    }
}

// ===========================================================================
// Engine
// ===========================================================================

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CepError {
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid rule '{rule_id}': {reason}")]
    InvalidRule { rule_id: String, reason: String },
    #[error("rule id '{0}' already registered")]
    DuplicateRuleId(String),
    #[error("event stream went backwards: fed ts {got} after ts {last}")]
    OutOfOrderFeed { last: u64, got: u64 },
}

/// Correlation engine over a non-decreasing event stream.
///
/// Feeding is deterministic: the same rule set and stream always produce the
/// same emissions, with ids drawn from the shared sequence counter. When one
/// fed event completes several rules, emissions come out in rule-registration
/// order.
#[derive(Debug, Default)]
pub struct CepEngine {
    rules: Vec<CepRule>,
    buffers: Vec<Vec<Event>>,
    last_ts: Option<u64>,
}

impl CepEngine {
    pub fn new() -> CepEngine {
        CepEngine::default()
    }

    pub fn register_rule(&mut self, rule: CepRule) -> Result<(), CepError> {
        if self.rules.iter().any(|r| r.rule_id == rule.rule_id) {
            return Err(CepError::DuplicateRuleId(rule.rule_id));
        }
        self.rules.push(rule);
        self.buffers.push(Vec::new());
        Ok(())
    }

    pub fn rules(&self) -> &[CepRule] {
        &self.rules
    }

    /// Union of every registered rule's input types.
    pub fn input_types(&self) -> BTreeSet<String> {
        self.rules
            .iter()
            .flat_map(|r| r.pattern.kind.input_types())
            .map(str::to_string)
            .collect()
    }

    /// Advances the engine by one event and returns the complex events it
    /// completed, if any. Events must arrive in non-decreasing timestamp
    /// order; `seqs` supplies fresh sequence numbers for emissions.
    pub fn feed(&mut self, event: &Event, seqs: &mut SeqCounter) -> Result<Vec<Event>, CepError> {
        if let Some(last) = self.last_ts {
            if event.timestamp < last {
                return Err(CepError::OutOfOrderFeed { last, got: event.timestamp });
            }
        }
        self.last_ts = Some(event.timestamp);

        let mut emitted = Vec::new();
        for (rule, buffer) in self.rules.iter().zip(self.buffers.iter_mut()) {
            evict_expired(buffer, event.timestamp, rule.pattern.window_ms);
            if !rule.pattern.kind.involves(&event.event_type) {
                continue;
            }
            buffer.push(event.clone());
            if let Some(indices) = match_completing(&rule.pattern.kind, buffer) {
                let constituents: Vec<Event> = indices.iter().map(|&i| buffer[i].clone()).collect();
                for &i in indices.iter().rev() {
                    buffer.remove(i);
                }
                emitted.push(build_complex(rule, &constituents, seqs));
            }
        }
        Ok(emitted)
    }
}

fn evict_expired(buffer: &mut Vec<Event>, now: u64, window_ms: u64) {
    buffer.retain(|e| e.timestamp.checked_add(window_ms).map_or(true, |expiry| expiry > now));
}

/// Finds the constituent set for a match completed by the newest buffer
/// entry, or None. Returned indices are ascending, so constituents come out
/// in (timestamp, seq) order. Selection is greedy-earliest, which makes
/// consume-on-match deterministic.
fn match_completing(kind: &PatternKind, buffer: &[Event]) -> Option<Vec<usize>> {
    let last = buffer.len() - 1;
    match kind {
        PatternKind::All(types) => {
            let mut indices = Vec::with_capacity(types.len());
            for wanted in types {
                let index = buffer.iter().position(|e| &e.event_type == wanted)?;
                indices.push(index);
            }
            indices.sort_unstable();
            debug_assert!(indices.contains(&last), "completed AllOf must include the newest event");
            Some(indices)
        }
        PatternKind::Sequence(types) => {
            let (final_type, prefix) = types.split_last().expect("validated length");
            if buffer[last].event_type != *final_type {
                return None;
            }
            let mut indices = Vec::with_capacity(types.len());
            let mut cursor = 0;
            for wanted in prefix {
                let index = buffer[cursor..last]
                    .iter()
                    .position(|e| &e.event_type == wanted)
                    .map(|offset| cursor + offset)?;
                indices.push(index);
                cursor = index + 1;
            }
            indices.push(last);
            Some(indices)
        }
        PatternKind::Count { n, .. } => {
            if buffer.len() >= *n {
                debug_assert_eq!(buffer.len(), *n, "buffer may never exceed n");
                Some((0..buffer.len()).collect())
            } else {
                None
            }
        }
    }
}

fn build_complex(rule: &CepRule, constituents: &[Event], seqs: &mut SeqCounter) -> Event {
    let completing = constituents.last().expect("matches are non-empty");
    let mut payload: BTreeMap<String, Scalar> = BTreeMap::new();
    for constituent in constituents {
        // ascending (ts, seq) order, so later constituents win collisions
        payload.extend(constituent.payload.clone());
    }
    let seq = seqs.next();
    Event {
        id: format!("e{seq}"),
        event_type: rule.output_type.clone(),
        timestamp: completing.timestamp,
        seq,
        source: rule.output_source.into(),
        effects: rule.effect_template.clone(),
        payload,
    }
}

// ===========================================================================
// Tests
// ===========================================================================
