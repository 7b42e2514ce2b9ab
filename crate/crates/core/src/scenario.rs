//! Deterministic scenario simulator.
//!
//! A scenario bundles everything one run needs: the initial situation model,
//! the process to orchestrate, the service registry, correlation rules, the
//! agility configuration, and a timeline of field events to inject. The
//! simulator drives a logical clock over an agenda of due timestamps; at each
//! visited instant it runs a fixed phase order — inject field events, tick
//! the workflow, correlate through the rule engine until quiescent, deliver
//! everything to the tracker, then evaluate divergence on the cadence. Any
//! events published by an adaptation are flushed through correlation and
//! delivery within the same instant, so the log stays ordered by
//! (timestamp, seq) no matter what the adaptation started.
//!
//! Outputs land in one directory: `events.jsonl` (the full bus log),
//! `divergence.jsonl`, `adaptations.jsonl`, and `final_models/` with the
//! canonical expected and field models. Two runs of the same scenario are
//! byte-identical, which `replay_check` verifies.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agility::{
    AdaptContext, AdaptationRecord, AdaptationRow, AgilityConfig, AgilityService, EvalCadence,
    ServiceRegistry, ADAPTATION_EVENT_TYPE,
};
use crate::cep::{CepEngine, CepRule};
use crate::divergence::{CostMode, DivergencePolicy, DivergenceReport, NatureTable, TimelineRow, WeightTable};
use crate::event::{Event, EventBus, EventSource, SeqCounter};
use crate::model::{ModelEffect, Scalar, SituationModel};
use crate::workflow::{ProcessDefinition, WorkflowEngine, MONITORING_EVENT_TYPE};

/// Bus subscriber name used by the correlation engine.
const CEP_SUBSCRIBER: &str = "cep";
/// Bus subscriber name used by the divergence tracker.
const TRACKER_SUBSCRIBER: &str = "agility";

// ===========================================================================
// Scenario definition
// ===========================================================================

/// One field event to inject at a fixed logical timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEventTemplate {
    pub ts: u64,
    #[serde(rename = "type")]
    pub event_type: String,
    #[serde(default)]
    pub payload: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub effects: Vec<ModelEffect>,
}

/// A complete, validated simulation input.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub initial_model: SituationModel,
    pub process: ProcessDefinition,
    pub registry: ServiceRegistry,
    pub cep_rules: Vec<CepRule>,
    pub agility: AgilityConfig,
    pub field_timeline: Vec<FieldEventTemplate>,
    pub end_ms: u64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl ScenarioError {
    /// Distinguishes rejected inputs (exit code 2) from failures while
    /// executing an accepted scenario (exit code 3).
    pub fn is_validation(&self) -> bool {
        !matches!(self, ScenarioError::Runtime(_))
    }
}

// On-disk shape. The agility block accepts the weight table either inline or
// as a path relative to the scenario file.
#[derive(Deserialize)]
struct ScenarioFileRepr {
    name: String,
    initial_model: SituationModel,
    process: ProcessDefinition,
    registry: ServiceRegistry,
    #[serde(default)]
    cep_rules: Vec<CepRule>,
    agility: AgilityRepr,
    #[serde(default)]
    field_timeline: Vec<FieldEventTemplate>,
    end_ms: u64,
}

#[derive(Deserialize)]
struct AgilityRepr {
    threshold: f64,
    eval: EvalCadence,
    #[serde(default)]
    weights: Option<WeightsRef>,
    #[serde(default)]
    cost_mode: CostMode,
    #[serde(default)]
    nature_table: NatureTable,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightsRef {
    Path(String),
    Inline(WeightTable),
}

/// Reads a weight-profile file: `{"default": ..., "entries": [...]}`.
pub fn load_weight_table(path: &Path) -> Result<WeightTable, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text)
        .map_err(|e| ScenarioError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Loads and validates a scenario file, resolving any weight-profile path
/// against the scenario's own directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    let repr: ScenarioFileRepr = serde_json::from_str(&text)
        .map_err(|e| ScenarioError::Parse { path: path.to_path_buf(), message: e.to_string() })?;

    let weights = match repr.agility.weights {
        None => WeightTable::default(),
        Some(WeightsRef::Inline(table)) => table,
        Some(WeightsRef::Path(relative)) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            load_weight_table(&base.join(relative))?
        }
    };
    let policy = DivergencePolicy {
        weights,
        cost_mode: repr.agility.cost_mode,
        nature: repr.agility.nature_table,
    };
    let agility = AgilityConfig::new(repr.agility.threshold, repr.agility.eval, policy)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

    let scenario = Scenario {
        name: repr.name,
        initial_model: repr.initial_model,
        process: repr.process,
        registry: repr.registry,
        cep_rules: repr.cep_rules,
        agility,
        field_timeline: repr.field_timeline,
        end_ms: repr.end_ms,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Structural checks beyond parsing: timeline ordering, horizon, process
    /// well-formedness against the registry, and registrable rules.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        for pair in self.field_timeline.windows(2) {
            if pair[0].ts > pair[1].ts {
                return Err(ScenarioError::Invalid(format!(
                    "field_timeline out of order: {} after {}",
                    pair[1].ts, pair[0].ts
                )));
            }
        }
        if let Some(last) = self.field_timeline.last() {
            if last.ts > self.end_ms {
                return Err(ScenarioError::Invalid(format!(
                    "end_ms {} precedes the last field event at {}",
                    self.end_ms, last.ts
                )));
            }
        }
        if self.agility.cadence == EvalCadence::EveryMs(0) {
            return Err(ScenarioError::Invalid("every_ms cadence must be positive".into()));
        }

        self.process
            .validate(|service_id| self.registry.get(service_id).is_some())
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        // dry-register to catch duplicate rule ids and type overlaps
        let mut trial = CepEngine::new();
        for rule in &self.cep_rules {
            trial
                .register_rule(rule.clone())
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }

        for warning in self.initial_model.validate() {
            tracing::warn!(%warning, "initial model has a dangling relation");
        }
        Ok(())
    }
}

// ===========================================================================
// Running
// ===========================================================================

/// Summary a run prints on success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_events: usize,
    pub n_adaptations: usize,
    pub final_divergence: f64,
}

/// Everything a completed run produced.
#[derive(Debug)]
pub struct RunResult {
    pub out_dir: PathBuf,
    pub events_path: PathBuf,
    pub summary: RunSummary,
    pub timeline: Vec<TimelineRow>,
    pub adaptations: Vec<AdaptationRow>,
    pub reports: Vec<DivergenceReport>,
    pub records: Vec<AdaptationRecord>,
    pub final_expected: SituationModel,
    pub final_field: SituationModel,
    /// Definition installed in the engine when the run ended (the original
    /// process, or the latest replacement).
    pub final_process: Option<ProcessDefinition>,
}

/// Runs a scenario to `end_ms` and writes all artifacts under `out_dir`.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<RunResult, ScenarioError> {
    scenario.validate()?;

    let mut bus = EventBus::new();
    let mut seqs = SeqCounter::new();
    let mut engine = WorkflowEngine::new();
    let mut cep = CepEngine::new();
    for rule in &scenario.cep_rules {
        cep.register_rule(rule.clone())
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    }
    let mut tracker = AgilityService::new(
        scenario.initial_model.clone_with_label("initial"),
        scenario.agility.clone(),
    );

    // The correlation engine hears every rule input; the tracker hears all
    // monitoring traffic, every field event type, every rule output, and the
    // adaptation announcements.
    for event_type in cep.input_types() {
        bus.subscribe(CEP_SUBSCRIBER, &event_type).expect("fresh bus");
    }
    let mut tracker_types: BTreeSet<String> = BTreeSet::new();
    tracker_types.insert(MONITORING_EVENT_TYPE.to_string());
    tracker_types.insert(ADAPTATION_EVENT_TYPE.to_string());
    tracker_types.extend(scenario.field_timeline.iter().map(|t| t.event_type.clone()));
    tracker_types.extend(scenario.cep_rules.iter().map(|r| r.output_type.clone()));
    for event_type in &tracker_types {
        bus.subscribe(TRACKER_SUBSCRIBER, event_type).expect("fresh bus");
    }

    // Agenda of logical instants to visit. Activity completions are added as
    // they become known; everything else is known up front.
    let mut agenda: BTreeSet<u64> = BTreeSet::new();
    agenda.insert(0);
    agenda.insert(scenario.end_ms);
    agenda.extend(scenario.field_timeline.iter().map(|t| t.ts));
    if let EvalCadence::EveryMs(step) = scenario.agility.cadence {
        agenda.extend((0..=scenario.end_ms).step_by(step as usize));
    }

    let mut timeline_idx = 0; // next field template to inject

    // Start the scenario's process at t=0 before the first visit.
    engine
        .start_process(
            scenario.process.clone(),
            0,
            tracker.field(),
            |service_id| scenario.registry.get(service_id).is_some(),
            &mut bus,
            &mut seqs,
        )
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    if let Some(due) = engine.next_due() {
        if due <= scenario.end_ms {
            agenda.insert(due);
        }
    }

    while let Some(now) = agenda.pop_first() {
        debug_assert!(now <= scenario.end_ms, "agenda never passes the horizon");

        // (1) inject field events due at this instant
        while timeline_idx < scenario.field_timeline.len()
            && scenario.field_timeline[timeline_idx].ts == now
        {
            let template = &scenario.field_timeline[timeline_idx];
            let mut event =
                Event::new(template.event_type.as_str(), now, seqs.next(), EventSource::Field)
                    .with_effects(template.effects.clone());
            for (name, value) in &template.payload {
                event = event.with_payload_entry(name.clone(), value.clone());
            }
            bus.publish(event);
            timeline_idx += 1;
        }

        // (2) advance the workflow
        engine.tick(now, tracker.field(), &mut bus, &mut seqs);

        // (3) + (4) correlate and deliver until quiescent
        pump(&mut bus, &mut cep, &mut tracker, &mut seqs)?;

        // (5) evaluate on the cadence; adaptation runs synchronously inside
        if tracker.evaluation_due(now) {
            let mut ctx = AdaptContext {
                engine: &mut engine,
                bus: &mut bus,
                seqs: &mut seqs,
                registry: &scenario.registry,
            };
            tracker.evaluate(now, &mut ctx);
            // anything the adaptation published still belongs to this instant
            pump(&mut bus, &mut cep, &mut tracker, &mut seqs)?;
        }

        if let Some(due) = engine.next_due() {
            if due <= scenario.end_ms {
                agenda.insert(due);
            }
        }
    }

    debug_assert!(
        bus.log().windows(2).all(|w| w[0].order_key() <= w[1].order_key()),
        "event log must stay ordered by (ts, seq)"
    );

    write_outputs(out_dir, &bus, &tracker, engine.definition().cloned())
}

/// Alternating correlation/delivery loop for one logical instant. Each pass
/// feeds the correlation inbox (publishing any emissions) and then delivers
/// the tracker inbox; emissions can re-enter either inbox, so repeat until
/// both are empty. Terminates because every match consumes at least two
/// buffered events and emits one.
fn pump(
    bus: &mut EventBus,
    cep: &mut CepEngine,
    tracker: &mut AgilityService,
    seqs: &mut SeqCounter,
) -> Result<(), ScenarioError> {
    loop {
        let correlate = bus.take_inbox(CEP_SUBSCRIBER);
        for event in &correlate {
            let emitted = cep
                .feed(event, seqs)
                .map_err(|e| ScenarioError::Runtime(e.to_string()))?;
            for complex in emitted {
                bus.publish(complex);
            }
        }
        let deliver = bus.take_inbox(TRACKER_SUBSCRIBER);
        for event in &deliver {
            tracker
                .on_event(event)
                .map_err(|e| ScenarioError::Runtime(e.to_string()))?;
        }
        if bus.pending(CEP_SUBSCRIBER) == 0 && bus.pending(TRACKER_SUBSCRIBER) == 0 {
            return Ok(());
        }
    }
}

fn write_outputs(
    out_dir: &Path,
    bus: &EventBus,
    tracker: &AgilityService,
    final_process: Option<ProcessDefinition>,
) -> Result<RunResult, ScenarioError> {
    let write_failed = |path: &Path| {
        let path = path.to_path_buf();
        move |source: io::Error| ScenarioError::Runtime(format!("cannot write {}: {source}", path.display()))
    };

    let models_dir = out_dir.join("final_models");
    fs::create_dir_all(&models_dir).map_err(write_failed(&models_dir))?;

    let events_path = out_dir.join("events.jsonl");
    let mut events_text = String::new();
    for event in bus.log() {
        events_text.push_str(&event.to_jsonl());
        events_text.push('\n');
    }
    fs::write(&events_path, &events_text).map_err(write_failed(&events_path))?;

    let timeline: Vec<TimelineRow> = tracker
        .divergence_timeline()
        .iter()
        .map(|report| TimelineRow::new(report, report.exceeds(tracker.config().threshold)))
        .collect();
    let divergence_path = out_dir.join("divergence.jsonl");
    let divergence_text: String =
        timeline.iter().map(|row| row.to_jsonl() + "\n").collect();
    fs::write(&divergence_path, divergence_text).map_err(write_failed(&divergence_path))?;

    let adaptations: Vec<AdaptationRow> =
        tracker.adaptations().iter().map(AdaptationRow::new).collect();
    let adaptations_path = out_dir.join("adaptations.jsonl");
    let adaptations_text: String =
        adaptations.iter().map(|row| row.to_jsonl() + "\n").collect();
    fs::write(&adaptations_path, adaptations_text).map_err(write_failed(&adaptations_path))?;

    let expected_path = models_dir.join("expected.json");
    fs::write(&expected_path, tracker.expected().to_canonical_json())
        .map_err(write_failed(&expected_path))?;
    let field_path = models_dir.join("field.json");
    fs::write(&field_path, tracker.field().to_canonical_json())
        .map_err(write_failed(&field_path))?;

    let summary = RunSummary {
        n_events: bus.log().len(),
        n_adaptations: tracker.adaptations().len(),
        final_divergence: tracker.divergence_timeline().last().map_or(0.0, |r| r.total),
    };
    Ok(RunResult {
        out_dir: out_dir.to_path_buf(),
        events_path,
        summary,
        timeline,
        adaptations,
        reports: tracker.divergence_timeline().to_vec(),
        records: tracker.adaptations().to_vec(),
        final_expected: tracker.expected().clone_with_label("expected"),
        final_field: tracker.field().clone_with_label("field"),
        final_process,
    })
}

// ===========================================================================
// Replay checking
// ===========================================================================

/// True iff the two logs are byte-identical after dropping lines that are
/// JSON objects carrying a `_meta` key (reserved for wall-clock annotations).
pub fn replay_check(log_a: &Path, log_b: &Path) -> Result<bool, ScenarioError> {
    let read = |path: &Path| -> Result<String, ScenarioError> {
        fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })
    };
    Ok(strip_meta_lines(&read(log_a)?) == strip_meta_lines(&read(log_b)?))
}

fn strip_meta_lines(text: &str) -> String {
    text.lines()
        .filter(|line| {
            !matches!(
                serde_json::from_str::<serde_json::Value>(line),
                Ok(serde_json::Value::Object(map)) if map.contains_key("_meta")
            )
        })
        .map(|line| line.to_string() + "\n")
        .collect()
}

// ===========================================================================
// Tests
// ===========================================================================
