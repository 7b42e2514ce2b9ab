//! The agility loop: track two situation models from the event stream,
//! evaluate their divergence on a cadence, and adapt when it exceeds the
//! configured threshold.
//!
//! The tracker keeps three models. `initial` is frozen at construction for
//! audit. `expected` absorbs the effects of monitoring-source events (what
//! the orchestrated process claims has happened) and `field` absorbs
//! field-source events (what observers report actually happened). Divergence
//! is scored over `diff(expected, field)`; when it exceeds the threshold the
//! adaptation runs synchronously: interrupt everything, re-plan every unmet
//! objective against the service registry, start the replacement process,
//! and re-baseline `expected` to the field model so only *new* deviation can
//! trigger again.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::divergence::{compute_divergence, DivergencePolicy, DivergenceReport, RedesignLevel};
use crate::event::{Event, EventBus, EventSource, SeqCounter};
use crate::model::{diff, Concept, Instance, InstanceKey, ModelEffect, Scalar, SituationModel};
use crate::workflow::{ActivityDef, Edge, Endpoint, ProcessDefinition, WorkflowEngine};

/// Event type of the meta event emitted after every completed adaptation.
pub const ADAPTATION_EVENT_TYPE: &str = "adaptation_performed";

/// Objective attribute naming the capability a replacement service must offer.
pub const REQUIRED_CAPABILITY_ATTRIBUTE: &str = "required_capability";

/// Objective attribute marking satisfaction ("true" or boolean true).
pub const SATISFIED_ATTRIBUTE: &str = "satisfied";

// ===========================================================================
// Service registry
// ===========================================================================

/// One invocable service a partner contributes to the collaboration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceEntry {
    pub service_id: String,
    pub partner_id: String,
    pub capability: String,
    pub duration_ms: u64,
    /// Applied to the expected model when an activity bound to this service
    /// completes.
    #[serde(default)]
    pub expected_effects: Vec<ModelEffect>,
    #[serde(default = "default_available")]
    pub available: bool,
}

fn default_available() -> bool {
    true
}

/// All services known to the re-planner, keyed by unique `service_id`.
/// Serializes as a bare array of entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct ServiceRegistry {
    services: Vec<ServiceEntry>,
}

impl ServiceRegistry {
    pub fn new(services: Vec<ServiceEntry>) -> Result<ServiceRegistry, RegistryError> {
        let mut seen = std::collections::BTreeSet::new();
        for entry in &services {
            if !seen.insert(entry.service_id.clone()) {
                return Err(RegistryError::DuplicateServiceId(entry.service_id.clone()));
            }
        }
        Ok(ServiceRegistry { services })
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ServiceEntry> {
        self.services.iter()
    }

    pub fn get(&self, service_id: &str) -> Option<&ServiceEntry> {
        self.services.iter().find(|e| e.service_id == service_id)
    }

    /// Cheapest deterministic match: the available entry with the given
    /// capability and the lexicographically smallest `service_id`.
    pub fn find_capable(&self, capability: &str) -> Option<&ServiceEntry> {
        self.services
            .iter()
            .filter(|e| e.available && e.capability == capability)
            .min_by(|a, b| a.service_id.cmp(&b.service_id))
    }
}

impl<'de> Deserialize<'de> for ServiceRegistry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let services = Vec::<ServiceEntry>::deserialize(deserializer)?;
        ServiceRegistry::new(services).map_err(D::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("duplicate service id {0:?}")]
    DuplicateServiceId(String),
}

// ===========================================================================
// Configuration
// ===========================================================================

/// When divergence evaluations happen during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalCadence {
    /// Evaluate at every visited logical timestamp.
    EveryTimestamp,
    /// Evaluate on the grid 0, m, 2m, ... of logical milliseconds.
    EveryMs(u64),
}

impl EvalCadence {
    /// Whether `now` lies on this cadence.
    pub fn due(self, now: u64) -> bool {
        match self {
            EvalCadence::EveryTimestamp => true,
            EvalCadence::EveryMs(m) => now % m == 0,
        }
    }
}

// serde shape: "every_ts" | {"every_ms": m}
#[derive(Deserialize)]
#[serde(untagged)]
enum CadenceRepr {
    Tag(String),
    Ms { every_ms: u64 },
}

impl Serialize for EvalCadence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            EvalCadence::EveryTimestamp => serializer.serialize_str("every_ts"),
            EvalCadence::EveryMs(m) => {
                use serde::ser::SerializeMap;
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("every_ms", m)?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for EvalCadence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match CadenceRepr::deserialize(deserializer)? {
            CadenceRepr::Tag(tag) if tag == "every_ts" => Ok(EvalCadence::EveryTimestamp),
            CadenceRepr::Tag(tag) => {
                Err(D::Error::custom(format!("unknown cadence {tag:?}, expected \"every_ts\"")))
            }
            CadenceRepr::Ms { every_ms: 0 } => {
                Err(D::Error::custom("every_ms cadence must be positive"))
            }
            CadenceRepr::Ms { every_ms } => Ok(EvalCadence::EveryMs(every_ms)),
        }
    }
}

/// Everything the tracker needs to score divergence and decide to adapt.
#[derive(Debug, Clone, PartialEq)]
pub struct AgilityConfig {
    pub threshold: f64,
    pub cadence: EvalCadence,
    pub policy: DivergencePolicy,
}

impl AgilityConfig {
    pub fn new(
        threshold: f64,
        cadence: EvalCadence,
        policy: DivergencePolicy,
    ) -> Result<AgilityConfig, AgilityError> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(AgilityError::InvalidThreshold(threshold));
        }
        Ok(AgilityConfig { threshold, cadence, policy })
    }
}

// ===========================================================================
// Errors and records
// ===========================================================================

#[derive(Debug, Error, PartialEq)]
pub enum AgilityError {
    #[error("event timestamp {got} regresses behind {last}")]
    OutOfOrderEvent { last: u64, got: u64 },
    #[error("threshold {0} is not a finite non-negative number")]
    InvalidThreshold(f64),
}

/// Everything decided by one adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationRecord {
    pub triggered_at: u64,
    pub report: DivergenceReport,
    pub level: RedesignLevel,
    pub old_process_id: Option<String>,
    pub new_process_id: Option<String>,
    /// Objectives the re-planner covered, in canonical key order.
    pub replanned_objectives: Vec<InstanceKey>,
    /// Unmet objectives no available service could cover.
    pub unplanned_objectives: Vec<InstanceKey>,
}

/// One adaptation line, as written to `adaptations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRow {
    pub ts: u64,
    pub total: f64,
    pub level: u8,
    pub new_process: Option<String>,
    pub unplanned: Vec<String>,
}

impl AdaptationRow {
    pub fn new(record: &AdaptationRecord) -> AdaptationRow {
        AdaptationRow {
            ts: record.triggered_at,
            total: record.report.total,
            level: record.level.as_int().expect("adaptation level is never None"),
            new_process: record.new_process_id.clone(),
            unplanned: record.unplanned_objectives.iter().map(|k| k.to_string()).collect(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("adaptation row serialization")
    }
}

// ===========================================================================
// The agility service
// ===========================================================================

/// Mutable collaborators the adaptation step drives. The tracker does not
/// own the engine or the bus; the surrounding run loop lends them out.
pub struct AdaptContext<'a> {
    pub engine: &'a mut WorkflowEngine,
    pub bus: &'a mut EventBus,
    pub seqs: &'a mut SeqCounter,
    pub registry: &'a ServiceRegistry,
}

/// Tracks expected/field models, evaluates divergence, and adapts on trigger.
#[derive(Debug)]
pub struct AgilityService {
    config: AgilityConfig,
    initial: SituationModel,
    expected: SituationModel,
    field: SituationModel,
    last_event_ts: Option<u64>,
    last_eval_at: Option<u64>,
    timeline: Vec<DivergenceReport>,
    adaptations: Vec<AdaptationRecord>,
}

impl AgilityService {
    /// Both working models start as clones of `initial`, which stays frozen.
    pub fn new(initial: SituationModel, config: AgilityConfig) -> AgilityService {
        let expected = initial.clone_with_label("expected");
        let field = initial.clone_with_label("field");
        AgilityService {
            config,
            initial,
            expected,
            field,
            last_event_ts: None,
            last_eval_at: None,
            timeline: Vec::new(),
            adaptations: Vec::new(),
        }
    }

    pub fn config(&self) -> &AgilityConfig {
        &self.config
    }

    pub fn initial(&self) -> &SituationModel {
        &self.initial
    }

    pub fn expected(&self) -> &SituationModel {
        &self.expected
    }

    pub fn field(&self) -> &SituationModel {
        &self.field
    }

    pub fn last_eval_at(&self) -> Option<u64> {
        self.last_eval_at
    }

    /// Chronological reports from every evaluation so far.
    pub fn divergence_timeline(&self) -> &[DivergenceReport] {
        &self.timeline
    }

    pub fn adaptations(&self) -> &[AdaptationRecord] {
        &self.adaptations
    }

    /// Whether an evaluation is owed at `now` and none has happened there yet.
    pub fn evaluation_due(&self, now: u64) -> bool {
        self.config.cadence.due(now) && self.last_eval_at != Some(now)
    }

    /// Routes one event into the model its source owns: monitoring events
    /// mutate `expected`, field events mutate `field`, and meta events (Cep
    /// source) touch neither. A failing effect is skipped with a warning;
    /// the rest of the event still applies. Returns the warnings.
    pub fn on_event(&mut self, event: &Event) -> Result<Vec<String>, AgilityError> {
        if let Some(last) = self.last_event_ts {
            if event.timestamp < last {
                return Err(AgilityError::OutOfOrderEvent { last, got: event.timestamp });
            }
        }
        self.last_event_ts = Some(event.timestamp);

        let model = match event.source {
            EventSource::Monitoring => &mut self.expected,
            EventSource::Field => &mut self.field,
            EventSource::Cep => {
                // meta events carry decisions, not model changes
                let mut warnings = Vec::new();
                if !event.effects.is_empty() {
                    let warning = format!(
                        "event {}: {} effect(s) ignored on meta event",
                        event.id,
                        event.effects.len()
                    );
                    tracing::warn!(event_id = %event.id, "effects ignored on meta event");
                    warnings.push(warning);
                }
                return Ok(warnings);
            }
        };

        let mut warnings = Vec::new();
        for effect in &event.effects {
            if let Err(err) = model.apply_effect(effect) {
                let warning = format!("event {}: effect skipped: {err}", event.id);
                tracing::warn!(event_id = %event.id, error = %err, "effect skipped");
                warnings.push(warning);
            }
        }
        Ok(warnings)
    }

    /// Scores the current expected/field divergence, appends the report to
    /// the timeline, and — when the total strictly exceeds the threshold —
    /// runs the adaptation synchronously before returning.
    pub fn evaluate(&mut self, now: u64, ctx: &mut AdaptContext<'_>) -> DivergenceReport {
        let differences = diff(&self.expected, &self.field);
        let report = compute_divergence(&differences, &self.config.policy, now);
        self.last_eval_at = Some(now);
        self.timeline.push(report.clone());
        if report.exceeds(self.config.threshold) {
            let record = self.adapt(now, report.clone(), ctx);
            self.adaptations.push(record);
        }
        report
    }

    /// The six-step adaptation: interrupt the running process, find unmet
    /// objectives in the field model, match each to an available service by
    /// capability, start the replacement process, re-baseline the expected
    /// model to the field model, and announce the adaptation on the bus.
    fn adapt(
        &mut self,
        now: u64,
        report: DivergenceReport,
        ctx: &mut AdaptContext<'_>,
    ) -> AdaptationRecord {
        let old_process_id = ctx.engine.process_id().map(str::to_owned);
        ctx.engine.interrupt_all(now, "adaptation", ctx.bus, ctx.seqs);

        let mut replanned = Vec::new();
        let mut unplanned = Vec::new();
        let mut activities = Vec::new();
        for objective in unmet_objectives(&self.field) {
            let Some(Scalar::Str(capability)) =
                objective.attributes.get(REQUIRED_CAPABILITY_ATTRIBUTE)
            else {
                tracing::warn!(objective = %objective.key, "objective names no required capability");
                unplanned.push(objective.key.clone());
                continue;
            };
            match ctx.registry.find_capable(capability) {
                Some(service) => {
                    activities.push(ActivityDef {
                        activity_id: format!("achieve-{}", objective.key.id),
                        service_id: service.service_id.clone(),
                        duration_ms: service.duration_ms,
                        expected_effects: service.expected_effects.clone(),
                        serves_objective: Some(objective.key.clone()),
                    });
                    replanned.push(objective.key.clone());
                }
                None => {
                    tracing::warn!(objective = %objective.key, capability, "no capable service");
                    unplanned.push(objective.key.clone());
                }
            }
        }

        let new_process_id = if activities.is_empty() {
            None
        } else {
            let process_id = format!("replan-{}", self.adaptations.len() + 1);
            let mut edges = Vec::with_capacity(activities.len() * 2);
            for activity in &activities {
                edges.push(Edge {
                    from: Endpoint::Start,
                    to: Endpoint::Activity(activity.activity_id.clone()),
                    guard: None,
                });
                edges.push(Edge {
                    from: Endpoint::Activity(activity.activity_id.clone()),
                    to: Endpoint::End,
                    guard: None,
                });
            }
            let def = ProcessDefinition { process_id: process_id.clone(), activities, edges };
            let registry = &*ctx.registry;
            ctx.engine
                .start_process(
                    def,
                    now,
                    &self.field,
                    |sid| registry.get(sid).is_some_and(|e| e.available),
                    ctx.bus,
                    ctx.seqs,
                )
                .expect("replanned process is valid by construction");
            Some(process_id)
        };

        self.expected = self.field.clone_with_label("expected");
        debug_assert!(diff(&self.expected, &self.field).is_empty(), "re-baseline law");

        let level = report.level;
        let mut announcement = Event::new(ADAPTATION_EVENT_TYPE, now, ctx.seqs.next(), EventSource::Cep)
            .with_payload_entry("level", f64::from(level.as_int().expect("trigger implies diffs")))
            .with_payload_entry("total", report.total);
        if let Some(process_id) = &new_process_id {
            announcement = announcement.with_payload_entry("new_process", process_id.clone());
        }
        ctx.bus.publish(announcement);

        AdaptationRecord {
            triggered_at: now,
            report,
            level,
            old_process_id,
            new_process_id,
            replanned_objectives: replanned,
            unplanned_objectives: unplanned,
        }
    }
}

/// Objective instances in `model` not marked satisfied, in canonical order.
fn unmet_objectives(model: &SituationModel) -> impl Iterator<Item = &Instance> {
    model.instances().filter(|instance| {
        instance.key.concept == Concept::Objective && !objective_satisfied(instance)
    })
}

fn objective_satisfied(instance: &Instance) -> bool {
    match instance.attributes.get(SATISFIED_ATTRIBUTE) {
        Some(Scalar::Str(s)) => s == "true",
        Some(Scalar::Bool(b)) => *b,
        _ => false,
    }
}

// ===========================================================================
// Tests
// ===========================================================================
