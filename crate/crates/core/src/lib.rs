//! Run-time agility for collaborative processes.
//!
//! This crate keeps two situation models side by side while a collaborative
//! workflow runs: the *expected* model, advanced by monitoring events from
//! workflow execution, and the *field* model, advanced by observations from
//! reality. A weighted divergence score over their structural diff decides
//! when expectation and reality have drifted far enough apart that the
//! running process should be interrupted and replanned from what the field
//! actually looks like.
//!
//! Modules, bottom up:
//!
//! - [`model`]: situation models, effects, and the keyed structural diff
//! - [`event`]: typed events and the type-based publish/subscribe bus
//! - [`cep`]: complex event processing over sliding windows
//! - [`workflow`]: process definitions and the activity state machine
//! - [`divergence`]: weighted divergence scoring and redesign-level mapping
//! - [`agility`]: the tracker that routes events, evaluates, and adapts
//! - [`scenario`]: deterministic discrete-event simulation of full runs

pub mod agility;
pub mod cep;
pub mod divergence;
pub mod event;
pub mod model;
pub mod scenario;
pub mod workflow;

pub use agility::{
    AdaptContext, AdaptationRecord, AdaptationRow, AgilityConfig, AgilityError, AgilityService,
    EvalCadence, RegistryError, ServiceEntry, ServiceRegistry, ADAPTATION_EVENT_TYPE,
    REQUIRED_CAPABILITY_ATTRIBUTE, SATISFIED_ATTRIBUTE,
};
pub use cep::{CepEngine, CepError, CepPattern, CepRule, OutputSource, PatternKind};
pub use divergence::{
    classify_nature, compute_divergence, instance_cost, Contribution, CostMode, DivergencePolicy,
    DivergenceReport, NatureTable, RedesignLevel, TimelineRow, WeightError, WeightTable,
};
pub use event::{BusError, Event, EventBus, EventSource, SeqCounter, SubscriptionHandle};
pub use model::{
    diff, Concept, DiffOp, Difference, Instance, InstanceKey, ModelEffect, ModelError, ParseError,
    Relation, Scalar, SituationModel, ValidationWarning,
};
pub use scenario::{
    load_scenario, load_weight_table, replay_check, run, FieldEventTemplate, RunResult, RunSummary,
    Scenario, ScenarioError,
};
pub use workflow::{
    ActivityDef, ActivityInstance, ActivityState, Edge, Endpoint, Guard, ProcessDefinition,
    WorkflowEngine, WorkflowError, MONITORING_EVENT_TYPE,
};
