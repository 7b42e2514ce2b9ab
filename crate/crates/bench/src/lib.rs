//! Deterministic synthetic-data builders for the benchmarks. No RNG: sizes
//! and mutation strides are explicit so every run measures the same work.

use agility_core::{
    ActivityDef, Concept, Edge, Endpoint, Event, EventSource, Instance, InstanceKey,
    ProcessDefinition, Scalar, SituationModel,
};

const CONCEPTS: [Concept; 5] =
    [Concept::Partner, Concept::Risk, Concept::Resource, Concept::Objective, Concept::Service];

const ATTRIBUTES: [&str; 6] = ["status", "level", "zone", "mode", "capacity", "priority"];

/// A model with `instances` instances spread over five concepts, each
/// carrying `attrs_per` attributes and one relation.
pub fn synthetic_model(label: &str, instances: usize, attrs_per: usize) -> SituationModel {
    let mut model = SituationModel::new(label);
    for i in 0..instances {
        let concept = CONCEPTS[i % CONCEPTS.len()].clone();
        let mut instance = Instance::new(concept, format!("i{i}"));
        for a in 0..attrs_per {
            let name = ATTRIBUTES[a % ATTRIBUTES.len()];
            let value = match a % 3 {
                0 => Scalar::Str(format!("v{}", (i + a) % 9)),
                1 => Scalar::Num((i * 31 + a) as f64),
                _ => Scalar::Bool((i + a) % 2 == 0),
            };
            // repeated names overwrite, keeping exactly min(attrs_per, 6) attrs
            instance = instance.with_attribute(name, value);
        }
        let target = InstanceKey::new(
            CONCEPTS[(i + 1) % CONCEPTS.len()].clone(),
            format!("i{}", (i + 1) % instances.max(1)),
        );
        instance = instance.with_relation("linked_to", target);
        model.insert(instance).expect("ids are unique by construction");
    }
    model
}

/// A copy of `base` where every `stride`-th instance is edited, every
/// `3 * stride`-th dropped, and one instance per hundred added.
pub fn perturbed_model(base: &SituationModel, stride: usize) -> SituationModel {
    let stride = stride.max(1);
    let mut model = SituationModel::new(base.label());
    for (i, instance) in base.instances().enumerate() {
        if i % (3 * stride) == 0 {
            continue; // dropped
        }
        let mut copy = instance.clone();
        if i % stride == 0 {
            copy.attributes.insert("status".into(), Scalar::Str(format!("changed{i}")));
        }
        model.insert(copy).expect("copied ids stay unique");
    }
    let additions = base.instances().count() / 100 + 1;
    for n in 0..additions {
        let instance = Instance::new(Concept::Risk, format!("extra{n}"))
            .with_attribute("status", Scalar::Str("new".into()));
        model.insert(instance).expect("extra ids are fresh");
    }
    model
}

/// A (ts, seq)-ordered stream cycling through `types`, eight events per
/// timestamp step.
pub fn event_stream(len: usize, types: &[&str]) -> Vec<Event> {
    (0..len)
        .map(|i| {
            let event_type = types[i % types.len()];
            Event::new(event_type, (i / 8) as u64 * 5, i as u64 + 1, EventSource::Field)
                .with_payload_entry("reading", i as f64)
        })
        .collect()
}

/// A straight-line process: START -> a0 -> a1 -> ... -> END.
pub fn chain_process(activities: usize) -> ProcessDefinition {
    assert!(activities > 0, "a chain needs at least one activity");
    let defs: Vec<ActivityDef> = (0..activities)
        .map(|i| ActivityDef {
            activity_id: format!("a{i}"),
            service_id: "s".into(),
            duration_ms: 100,
            expected_effects: Vec::new(),
            serves_objective: None,
        })
        .collect();
    let mut edges =
        vec![Edge { from: Endpoint::Start, to: Endpoint::Activity("a0".into()), guard: None }];
    for i in 1..activities {
        edges.push(Edge {
            from: Endpoint::Activity(format!("a{}", i - 1)),
            to: Endpoint::Activity(format!("a{i}")),
            guard: None,
        });
    }
    edges.push(Edge {
        from: Endpoint::Activity(format!("a{}", activities - 1)),
        to: Endpoint::End,
        guard: None,
    });
    ProcessDefinition { process_id: "chain".into(), activities: defs, edges }
}
