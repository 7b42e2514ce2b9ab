//! Collaborative process definitions and their execution state machine.
//!
//! A process is an acyclic graph of service-backed activities between the
//! START and END anchors. Parallel branches are plain edge fan-out; an
//! activity with several incoming edges is a join and waits for all of them.
//! Execution is driven by explicit ticks at logical timestamps, and every
//! state transition is published as a monitoring event so the expected
//! situation model can follow along. Activity states move only along
//! Invoked -> InProgress -> Completed, with Interrupted reachable from the
//! two non-terminal states; Completed and Interrupted are final.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::event::{Event, EventBus, EventSource, SeqCounter};
use crate::model::{InstanceKey, ModelEffect, Scalar, SituationModel};

/// Event type under which all workflow state transitions are published.
pub const MONITORING_EVENT_TYPE: &str = "activity_state";

// ===========================================================================
// Definitions
// ===========================================================================

/// One unit of work, executed by a registered service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityDef {
    pub activity_id: String,
    pub service_id: String,
    pub duration_ms: u64,
    /// Applied to the expected model when the activity completes.
    #[serde(default)]
    pub expected_effects: Vec<ModelEffect>,
    /// Objective this activity exists to satisfy, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serves_objective: Option<InstanceKey>,
}

/// Graph endpoint: an activity id or one of the START/END anchors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    End,
    Activity(String),
}

impl Endpoint {
    fn parse(text: &str) -> Endpoint {
        match text {
            "START" => Endpoint::Start,
            "END" => Endpoint::End,
            other => Endpoint::Activity(other.to_string()),
        }
    }

    fn as_str(&self) -> &str {
        match self {
            Endpoint::Start => "START",
            Endpoint::End => "END",
            Endpoint::Activity(id) => id,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Endpoint::parse(&String::deserialize(deserializer)?))
    }
}

/// Predicate over the field model gating a transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Guard {
    /// The keyed instance exists.
    Exists {
        #[serde(flatten)]
        key: InstanceKey,
    },
    /// The keyed instance exists and carries the given attribute value.
    AttrEq {
        #[serde(flatten)]
        key: InstanceKey,
        attribute: String,
        value: Scalar,
    },
}

impl Guard {
    pub fn passes(&self, field: &SituationModel) -> bool {
        match self {
            Guard::Exists { key } => field.contains(key),
            Guard::AttrEq { key, attribute, value } => field
                .get(key)
                .and_then(|instance| instance.attributes.get(attribute))
                .map_or(false, |actual| actual == value),
        }
    }
}

/// Directed transition, optionally guarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: Endpoint,
    pub to: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Guard>,
}

/// An executable process graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessDefinition {
    pub process_id: String,
    pub activities: Vec<ActivityDef>,
    pub edges: Vec<Edge>,
}

impl ProcessDefinition {
    pub fn activity(&self, activity_id: &str) -> Option<&ActivityDef> {
        self.activities.iter().find(|a| a.activity_id == activity_id)
    }

    fn incoming<'a>(&'a self, activity_id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges
            .iter()
            .filter(move |e| matches!(&e.to, Endpoint::Activity(id) if id == activity_id))
    }

    /// Checks the structural contract: unique activity ids, edges touching
    /// only known endpoints (START never a target, END never a source), an
    /// acyclic graph, every activity reachable from START, and every
    /// service id accepted by `service_resolvable`.
    pub fn validate(
        &self,
        mut service_resolvable: impl FnMut(&str) -> bool,
    ) -> Result<(), WorkflowError> {
        let invalid = |reason: String| WorkflowError::InvalidProcess {
            process_id: self.process_id.clone(),
            reason,
        };

        let mut ids = BTreeSet::new();
        for activity in &self.activities {
            if !ids.insert(activity.activity_id.as_str()) {
                return Err(invalid(format!("duplicate activity id '{}'", activity.activity_id)));
            }
        }
        for activity in &self.activities {
            if !service_resolvable(&activity.service_id) {
                return Err(invalid(format!(
                    "activity '{}' references unresolvable service '{}'",
                    activity.activity_id, activity.service_id
                )));
            }
        }

        for edge in &self.edges {
            match &edge.from {
                Endpoint::End => return Err(invalid("edge starts at END".into())),
                Endpoint::Activity(id) if !ids.contains(id.as_str()) => {
                    return Err(invalid(format!("edge references unknown activity '{id}'")));
                }
                _ => {}
            }
            match &edge.to {
                Endpoint::Start => return Err(invalid("edge targets START".into())),
                Endpoint::Activity(id) if !ids.contains(id.as_str()) => {
                    return Err(invalid(format!("edge references unknown activity '{id}'")));
                }
                _ => {}
            }
        }

        // Kahn's algorithm over the activity-to-activity subgraph
        let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|id| (*id, 0)).collect();
        for edge in &self.edges {
            if let (Endpoint::Activity(_), Endpoint::Activity(to)) = (&edge.from, &edge.to) {
                *indegree.get_mut(to.as_str()).expect("validated endpoint") += 1;
            }
        }
        let mut queue: VecDeque<&str> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
        let mut processed = 0;
        while let Some(current) = queue.pop_front() {
            processed += 1;
            for edge in &self.edges {
                if let (Endpoint::Activity(from), Endpoint::Activity(to)) = (&edge.from, &edge.to) {
                    if from == current {
                        let d = indegree.get_mut(to.as_str()).expect("validated endpoint");
                        *d -= 1;
                        if *d == 0 {
                            queue.push_back(to);
                        }
                    }
                }
            }
        }
        if processed < ids.len() {
            return Err(invalid("process graph contains a cycle".into()));
        }

        // reachability from START
        let mut reachable: BTreeSet<&str> = BTreeSet::new();
        let mut frontier: VecDeque<&Endpoint> = VecDeque::from([&Endpoint::Start]);
        while let Some(node) = frontier.pop_front() {
            for edge in &self.edges {
                if edge.from == *node {
                    if let Endpoint::Activity(to) = &edge.to {
                        if reachable.insert(to.as_str()) {
                            frontier.push_back(&edge.to);
                        }
                    }
                }
            }
        }
        if let Some(stranded) = ids.iter().find(|id| !reachable.contains(**id)) {
            return Err(invalid(format!("activity '{stranded}' is unreachable from START")));
        }

        Ok(())
    }
}

// ===========================================================================
// Execution state
// ===========================================================================

/// Life-cycle state of one activity instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityState {
    Invoked,
    InProgress,
    Completed,
    Interrupted,
}

impl ActivityState {
    pub fn is_terminal(self) -> bool {
        matches!(self, ActivityState::Completed | ActivityState::Interrupted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityState::Invoked => "invoked",
            ActivityState::InProgress => "in_progress",
            ActivityState::Completed => "completed",
            ActivityState::Interrupted => "interrupted",
        }
    }
}

impl fmt::Display for ActivityState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Run-time record for one activity. `started_at` is the invocation time;
/// the duration clock runs from there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityInstance {
    pub activity_id: String,
    pub state: ActivityState,
    pub started_at: u64,
    pub ended_at: Option<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkflowError {
    #[error("invalid process '{process_id}': {reason}")]
    InvalidProcess { process_id: String, reason: String },
    #[error("process '{process_id}' still has non-terminal activities")]
    ProcessActive { process_id: String },
}

#[derive(Debug)]
struct RunningProcess {
    def: ProcessDefinition,
    instances: BTreeMap<String, ActivityInstance>,
}

/// Executes one process at a time against explicit logical-time ticks.
///
/// Guard predicates are evaluated against the field model handed into each
/// call, so a guard that fails today can pass on a later tick. All emitted
/// monitoring events carry `{activity_id, state}` payloads; completion
/// events additionally carry the activity's expected effects.
#[derive(Debug, Default)]
pub struct WorkflowEngine {
    run: Option<RunningProcess>,
}

impl WorkflowEngine {
    pub fn new() -> WorkflowEngine {
        WorkflowEngine::default()
    }

    pub fn definition(&self) -> Option<&ProcessDefinition> {
        self.run.as_ref().map(|run| &run.def)
    }

    pub fn process_id(&self) -> Option<&str> {
        self.run.as_ref().map(|r| r.def.process_id.as_str())
    }

    pub fn instance(&self, activity_id: &str) -> Option<&ActivityInstance> {
        self.run.as_ref()?.instances.get(activity_id)
    }

    /// Instances in activity-id order.
    pub fn instances(&self) -> impl Iterator<Item = &ActivityInstance> {
        self.run.iter().flat_map(|r| r.instances.values())
    }

    /// Earliest upcoming completion time over non-terminal instances.
    pub fn next_due(&self) -> Option<u64> {
        let run = self.run.as_ref()?;
        run.instances
            .values()
            .filter(|i| !i.state.is_terminal())
            .filter_map(|i| {
                let def = run.def.activity(&i.activity_id)?;
                i.started_at.checked_add(def.duration_ms)
            })
            .min()
    }

    /// Validates `def` and makes it the running process. Successors of START
    /// whose guards pass are invoked immediately, one monitoring event each.
    /// Fails if a previous process still has non-terminal activities.
    pub fn start_process(
        &mut self,
        def: ProcessDefinition,
        now: u64,
        field: &SituationModel,
        service_resolvable: impl FnMut(&str) -> bool,
        bus: &mut EventBus,
        seqs: &mut SeqCounter,
    ) -> Result<Vec<Event>, WorkflowError> {
        def.validate(service_resolvable)?;
        if let Some(run) = &self.run {
            if run.instances.values().any(|i| !i.state.is_terminal()) {
                return Err(WorkflowError::ProcessActive { process_id: run.def.process_id.clone() });
            }
        }
        self.run = Some(RunningProcess { def, instances: BTreeMap::new() });
        Ok(self.invoke_ready(now, field, bus, seqs))
    }

    /// Advances execution to `now`: Invoked activities move to InProgress,
    /// InProgress activities whose duration has elapsed complete (publishing
    /// their expected effects), and activities whose incoming transitions are
    /// all satisfied are invoked.
    pub fn tick(
        &mut self,
        now: u64,
        field: &SituationModel,
        bus: &mut EventBus,
        seqs: &mut SeqCounter,
    ) -> Vec<Event> {
        let mut events = Vec::new();
        if self.run.is_none() {
            return events;
        }

        // Invoked -> InProgress, for activities invoked on an earlier tick
        {
            let run = self.run.as_mut().expect("checked above");
            for instance in run.instances.values_mut() {
                if instance.state == ActivityState::Invoked {
                    instance.state = ActivityState::InProgress;
                    events.push(transition_event(&instance.activity_id, ActivityState::InProgress, now, &[], None, bus, seqs));
                }
            }
        }

        // InProgress -> Completed once the duration has elapsed
        {
            let run = self.run.as_mut().expect("checked above");
            let due: Vec<String> = run
                .instances
                .values()
                .filter(|i| i.state == ActivityState::InProgress)
                .filter(|i| {
                    run.def
                        .activity(&i.activity_id)
                        .map_or(false, |def| i.started_at + def.duration_ms <= now)
                })
                .map(|i| i.activity_id.clone())
                .collect();
            for activity_id in due {
                let effects = run
                    .def
                    .activity(&activity_id)
                    .map(|def| def.expected_effects.clone())
                    .unwrap_or_default();
                let instance = run.instances.get_mut(&activity_id).expect("due instance");
                instance.state = ActivityState::Completed;
                instance.ended_at = Some(now);
                events.push(transition_event(&activity_id, ActivityState::Completed, now, &effects, None, bus, seqs));
            }
        }

        events.extend(self.invoke_ready(now, field, bus, seqs));
        events
    }

    /// Interrupts every non-terminal activity, one monitoring event each.
    /// Terminal activities are untouched; the engine accepts a new
    /// `start_process` afterwards.
    pub fn interrupt_all(
        &mut self,
        now: u64,
        reason: &str,
        bus: &mut EventBus,
        seqs: &mut SeqCounter,
    ) -> Vec<Event> {
        let mut events = Vec::new();
        let Some(run) = self.run.as_mut() else {
            return events;
        };
        for instance in run.instances.values_mut() {
            if !instance.state.is_terminal() {
                instance.state = ActivityState::Interrupted;
                instance.ended_at = Some(now);
                events.push(transition_event(
                    &instance.activity_id,
                    ActivityState::Interrupted,
                    now,
                    &[],
                    Some(reason),
                    bus,
                    seqs,
                ));
            }
        }
        events
    }

    /// Invokes every not-yet-instantiated activity whose incoming edges are
    /// all satisfied: source completed (or START) and guard passing against
    /// the current field model. A join therefore fires exactly once, after
    /// its last incoming branch completes.
    fn invoke_ready(
        &mut self,
        now: u64,
        field: &SituationModel,
        bus: &mut EventBus,
        seqs: &mut SeqCounter,
    ) -> Vec<Event> {
        let mut events = Vec::new();
        let run = self.run.as_mut().expect("caller ensures a running process");
        let ready: Vec<String> = run
            .def
            .activities
            .iter()
            .filter(|a| !run.instances.contains_key(&a.activity_id))
            .filter(|a| {
                let mut incoming = run.def.incoming(&a.activity_id).peekable();
                incoming.peek().is_some()
                    && run.def.incoming(&a.activity_id).all(|edge| {
                        let source_done = match &edge.from {
                            Endpoint::Start => true,
                            Endpoint::Activity(id) => run
                                .instances
                                .get(id)
                                .map_or(false, |i| i.state == ActivityState::Completed),
                            Endpoint::End => false,
                        };
                        source_done && edge.guard.as_ref().map_or(true, |g| g.passes(field))
                    })
            })
            .map(|a| a.activity_id.clone())
            .collect();

        for activity_id in ready {
            run.instances.insert(
                activity_id.clone(),
                ActivityInstance {
                    activity_id: activity_id.clone(),
                    state: ActivityState::Invoked,
                    started_at: now,
                    ended_at: None,
                },
            );
            events.push(transition_event(&activity_id, ActivityState::Invoked, now, &[], None, bus, seqs));
        }
        events
    }
}

fn transition_event(
    activity_id: &str,
    state: ActivityState,
    now: u64,
    effects: &[ModelEffect],
    reason: Option<&str>,
    bus: &mut EventBus,
    seqs: &mut SeqCounter,
) -> Event {
    let mut event = Event::new(MONITORING_EVENT_TYPE, now, seqs.next(), EventSource::Monitoring)
        .with_effects(effects.to_vec())
        .with_payload_entry("activity_id", activity_id)
        .with_payload_entry("state", state.as_str());
    if let Some(reason) = reason {
        event = event.with_payload_entry("reason", reason);
    }
    bus.publish(event.clone());
    event
}

// ===========================================================================
// Tests
// ===========================================================================
