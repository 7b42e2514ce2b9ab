//! Shared helpers for integration tests: brute-force oracles implemented
//! independently of the library's algorithms, fixture lookup, and seeded
//! random generators.
//!
//! Each test target compiles this module separately and uses its own subset.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use agility_core::model::RELATIONS_PSEUDO_ATTRIBUTE;
use agility_core::{
    CepPattern, Concept, CostMode, DiffOp, Difference, Event, Instance, InstanceKey, Relation,
    Scalar, SituationModel,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Path to a bundled scenario or weight-profile file.
pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

// ===========================================================================
// Diff oracle: quadratic scans over explicit key lists
// ===========================================================================

pub fn naive_diff(expected: &SituationModel, field: &SituationModel) -> Vec<Difference> {
    let mut keys: Vec<InstanceKey> = expected.instances().map(|i| i.key.clone()).collect();
    for instance in field.instances() {
        if !keys.contains(&instance.key) {
            keys.push(instance.key.clone());
        }
    }
    keys.sort();

    let mut differences = Vec::new();
    for key in keys {
        match (expected.get(&key), field.get(&key)) {
            (Some(_), None) => differences.push(Difference::deleted(key)),
            (None, Some(_)) => differences.push(Difference::added(key)),
            (Some(before), Some(after)) => {
                let mut names: Vec<&str> = before.attributes.keys().map(String::as_str).collect();
                for name in after.attributes.keys() {
                    if !names.contains(&name.as_str()) {
                        names.push(name);
                    }
                }
                let mut changed: BTreeSet<String> = BTreeSet::new();
                for name in &names {
                    if before.attributes.get(*name) != after.attributes.get(*name) {
                        changed.insert((*name).to_string());
                    }
                }
                let mut attr_total = names.len();
                if before.relations != after.relations {
                    changed.insert(RELATIONS_PSEUDO_ATTRIBUTE.to_string());
                    if !names.contains(&RELATIONS_PSEUDO_ATTRIBUTE) {
                        attr_total += 1;
                    }
                }
                if !changed.is_empty() {
                    differences.push(Difference {
                        key,
                        operation: DiffOp::Updated,
                        changed_attributes: changed,
                        attr_total,
                    });
                }
            }
            (None, None) => unreachable!("key came from one of the models"),
        }
    }
    differences
}

// ===========================================================================
// Divergence oracle: naive summation with linear weight lookup
// ===========================================================================

pub struct NaiveWeights {
    pub default: f64,
    pub entries: Vec<(Concept, DiffOp, f64)>,
}

pub fn naive_total(differences: &[Difference], weights: &NaiveWeights, mode: CostMode) -> f64 {
    let mut total = 0.0;
    for difference in differences {
        let cost = match (mode, difference.operation) {
            (CostMode::Unit, _) => 1.0,
            (CostMode::Proportional, DiffOp::Added | DiffOp::Deleted) => 1.0,
            (CostMode::Proportional, DiffOp::Updated) => {
                if difference.attr_total == 0 {
                    1.0
                } else {
                    let ratio =
                        difference.changed_attributes.len() as f64 / difference.attr_total as f64;
                    ratio.min(1.0).max(0.0)
                }
            }
        };
        let mut weight = weights.default;
        for (concept, operation, value) in &weights.entries {
            if *concept == difference.key.concept && *operation == difference.operation {
                weight = *value;
                break;
            }
        }
        total += weight * cost;
    }
    total
}

// ===========================================================================
// CEP oracle: explicit unconsumed-buffer walk
// ===========================================================================

#[derive(Debug, Clone)]
pub enum OraclePattern {
    All(Vec<String>),
    Seq(Vec<String>),
    Count(String, usize),
}

impl OraclePattern {
    fn involves(&self, event_type: &str) -> bool {
        match self {
            OraclePattern::All(types) | OraclePattern::Seq(types) => {
                types.iter().any(|t| t == event_type)
            }
            OraclePattern::Count(t, _) => t == event_type,
        }
    }
}

/// One oracle emission: the completing timestamp and the `seq`s of every
/// consumed constituent.
pub type OracleEmission = (u64, BTreeSet<u64>);

/// Replays consume-once matching over a (ts, seq)-ordered stream, keeping an
/// explicit unconsumed buffer: evict everything older than the window (an
/// event expires exactly at `ts + window_ms`), then try to complete a match
/// with the newest event and greedily-earliest partners.
pub fn naive_cep(pattern: &OraclePattern, window_ms: u64, stream: &[Event]) -> Vec<OracleEmission> {
    let mut buffer: Vec<&Event> = Vec::new();
    let mut emissions = Vec::new();

    for event in stream {
        buffer.retain(|held| match held.timestamp.checked_add(window_ms) {
            Some(expiry) => expiry > event.timestamp,
            None => true,
        });
        if !pattern.involves(&event.event_type) {
            continue;
        }
        buffer.push(event);

        let matched: Option<Vec<usize>> = match pattern {
            OraclePattern::All(types) => {
                let mut picks = Vec::new();
                let mut complete = true;
                for wanted in types {
                    match buffer.iter().position(|e| e.event_type == *wanted) {
                        Some(index) => picks.push(index),
                        None => {
                            complete = false;
                            break;
                        }
                    }
                }
                if complete {
                    picks.sort_unstable();
                    Some(picks)
                } else {
                    None
                }
            }
            OraclePattern::Seq(steps) => {
                let last = buffer.len() - 1;
                if event.event_type != *steps.last().expect("validated") {
                    None
                } else {
                    let mut picks = Vec::new();
                    let mut cursor = 0;
                    let mut complete = true;
                    for step in &steps[..steps.len() - 1] {
                        let found = (cursor..last).find(|&i| buffer[i].event_type == *step);
                        match found {
                            Some(index) => {
                                picks.push(index);
                                cursor = index + 1;
                            }
                            None => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if complete {
                        picks.push(last);
                        Some(picks)
                    } else {
                        None
                    }
                }
            }
            OraclePattern::Count(_, n) => {
                if buffer.len() == *n {
                    Some((0..buffer.len()).collect())
                } else {
                    None
                }
            }
        };

        if let Some(indices) = matched {
            let consumed: BTreeSet<u64> = indices.iter().map(|&i| buffer[i].seq).collect();
            emissions.push((event.timestamp, consumed));
            for &index in indices.iter().rev() {
                buffer.remove(index);
            }
        }
    }
    emissions
}

// ===========================================================================
// Random generators
// ===========================================================================

pub const CONCEPT_POOL: [Concept; 6] = [
    Concept::Partner,
    Concept::Risk,
    Concept::Resource,
    Concept::Objective,
    Concept::Service,
    Concept::Activity,
];

pub fn random_scalar(rng: &mut ChaCha8Rng) -> Scalar {
    match rng.gen_range(0..3) {
        0 => Scalar::Bool(rng.gen()),
        1 => Scalar::Num(rng.gen_range(-50..50) as f64),
        _ => Scalar::str(["red", "green", "blue", "down", "up"][rng.gen_range(0..5)]),
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng, concept: Concept, id: &str) -> Instance {
    let mut instance = Instance::new(concept, id);
    for _ in 0..rng.gen_range(0..4) {
        let name = ["status", "level", "zone", "mode"][rng.gen_range(0..4)];
        instance.attributes.insert(name.to_string(), random_scalar(rng));
    }
    for _ in 0..rng.gen_range(0..3) {
        let target_concept = CONCEPT_POOL[rng.gen_range(0..CONCEPT_POOL.len())].clone();
        let target_id = format!("t{}", rng.gen_range(0..5));
        instance = instance.with_relation(
            ["uses", "threatens"][rng.gen_range(0..2)],
            InstanceKey::new(target_concept, target_id),
        );
    }
    instance
}

/// A model with up to `max_instances` random instances.
pub fn random_model(rng: &mut ChaCha8Rng, max_instances: usize) -> SituationModel {
    let mut model = SituationModel::new("m");
    let count = rng.gen_range(0..=max_instances);
    for _ in 0..count {
        let concept = CONCEPT_POOL[rng.gen_range(0..CONCEPT_POOL.len())].clone();
        let id = format!("i{}", rng.gen_range(0..8));
        let instance = random_instance(rng, concept, &id);
        // collisions are fine: keep the first occupant, as an insert would
        let _ = model.insert(instance);
    }
    model
}

/// A mutated copy: some instances dropped, some edited, some added.
pub fn mutated_model(rng: &mut ChaCha8Rng, base: &SituationModel) -> SituationModel {
    let mut model = SituationModel::new("m");
    for instance in base.instances() {
        match rng.gen_range(0..4) {
            0 => {} // drop
            1 => {
                // edit attributes and/or relations
                let mut edited = instance.clone();
                if rng.gen_bool(0.7) {
                    let name = ["status", "level", "zone", "mode"][rng.gen_range(0..4)];
                    edited.attributes.insert(name.to_string(), random_scalar(rng));
                }
                if rng.gen_bool(0.3) {
                    edited = edited.with_relation(
                        "uses",
                        InstanceKey::new(Concept::Resource, format!("t{}", rng.gen_range(0..5))),
                    );
                }
                model.insert(edited).unwrap();
            }
            _ => model.insert(instance.clone()).unwrap(),
        }
    }
    for _ in 0..rng.gen_range(0..3) {
        let concept = CONCEPT_POOL[rng.gen_range(0..CONCEPT_POOL.len())].clone();
        let id = format!("n{}", rng.gen_range(0..6));
        let _ = model.insert(random_instance(rng, concept, &id));
    }
    model
}

/// Random difference list, not tied to any actual model pair.
pub fn random_differences(rng: &mut ChaCha8Rng, max: usize) -> Vec<Difference> {
    let count = rng.gen_range(0..=max);
    (0..count)
        .map(|i| {
            let concept = CONCEPT_POOL[rng.gen_range(0..CONCEPT_POOL.len())].clone();
            let key = InstanceKey::new(concept, format!("d{i}"));
            match rng.gen_range(0..3) {
                0 => Difference::added(key),
                1 => Difference::deleted(key),
                _ => {
                    let attr_total = rng.gen_range(1..6);
                    let changed_count = rng.gen_range(1..=attr_total);
                    Difference {
                        key,
                        operation: DiffOp::Updated,
                        changed_attributes: (0..changed_count)
                            .map(|a| format!("a{a}"))
                            .collect(),
                        attr_total,
                    }
                }
            }
        })
        .collect()
}

/// Integer-valued weight table with unique (concept, operation) entries,
/// returned both as the library type and as the oracle's flat list.
pub fn random_integer_weights(
    rng: &mut ChaCha8Rng,
) -> (agility_core::WeightTable, NaiveWeights) {
    let default = rng.gen_range(0..5) as f64;
    let mut table = agility_core::WeightTable::uniform(default).unwrap();
    let mut entries = Vec::new();
    let mut used: BTreeSet<(String, DiffOp)> = BTreeSet::new();
    for _ in 0..rng.gen_range(0..6) {
        let concept = CONCEPT_POOL[rng.gen_range(0..CONCEPT_POOL.len())].clone();
        let operation = [DiffOp::Added, DiffOp::Deleted, DiffOp::Updated][rng.gen_range(0..3)];
        if !used.insert((concept.name().to_string(), operation)) {
            continue;
        }
        let weight = rng.gen_range(0..5) as f64;
        table = table.with_entry(concept.clone(), operation, weight).unwrap();
        entries.push((concept, operation, weight));
    }
    (table, NaiveWeights { default, entries })
}

/// A (ts, seq)-ordered stream over a small type alphabet. Every event gets a
/// unique payload marker `m{seq}` so merged payloads identify constituents.
pub fn random_stream(rng: &mut ChaCha8Rng, max_len: usize, alphabet: &[&str]) -> Vec<Event> {
    let len = rng.gen_range(0..=max_len);
    let mut ts = 0u64;
    (0..len as u64)
        .map(|i| {
            ts += rng.gen_range(0..6);
            let event_type = alphabet[rng.gen_range(0..alphabet.len())];
            Event::new(event_type, ts, i + 1, agility_core::EventSource::Field)
                .with_payload_entry(format!("m{}", i + 1), (i + 1) as f64)
        })
        .collect()
}

/// Extracts the constituent seq set from an engine emission's merged payload.
pub fn constituents_from_payload(payload: &BTreeMap<String, Scalar>) -> BTreeSet<u64> {
    payload
        .keys()
        .filter_map(|key| key.strip_prefix('m').and_then(|rest| rest.parse().ok()))
        .collect()
}

/// A random correlation pattern over `alphabet`, paired with its oracle twin
/// and the window it was built with.
pub fn random_pattern(
    rng: &mut ChaCha8Rng,
    alphabet: &[&str],
) -> (CepPattern, OraclePattern, u64) {
    let window_ms = [2u64, 3, 5, 8, 13][rng.gen_range(0..5)];
    match rng.gen_range(0..3) {
        0 => {
            let mut types: Vec<&str> = alphabet.to_vec();
            types.shuffle(rng);
            types.truncate(rng.gen_range(2..=3.min(alphabet.len())));
            (
                CepPattern::all_of(types.iter().copied(), window_ms).unwrap(),
                OraclePattern::All(types.iter().map(|s| s.to_string()).collect()),
                window_ms,
            )
        }
        1 => {
            let steps: Vec<&str> =
                (0..rng.gen_range(2..=3)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
            (
                CepPattern::sequence_of(steps.iter().copied(), window_ms).unwrap(),
                OraclePattern::Seq(steps.iter().map(|s| s.to_string()).collect()),
                window_ms,
            )
        }
        _ => {
            let event_type = alphabet[rng.gen_range(0..alphabet.len())];
            let n = rng.gen_range(2..=4);
            (
                CepPattern::count_of(event_type, n, window_ms).unwrap(),
                OraclePattern::Count(event_type.to_string(), n),
                window_ms,
            )
        }
    }
}

/// Diamond-shaped process (a, b fan out of START, join at c, then d): the
/// smallest graph exercising parallel invocation and a join.
pub fn diamond_process() -> agility_core::ProcessDefinition {
    serde_json::from_str(
        r#"{
            "process_id": "diamond",
            "activities": [
                {"activity_id": "a", "service_id": "s", "duration_ms": 1000},
                {"activity_id": "b", "service_id": "s", "duration_ms": 2000},
                {"activity_id": "c", "service_id": "s", "duration_ms": 1000},
                {"activity_id": "d", "service_id": "s", "duration_ms": 1500}
            ],
            "edges": [
                {"from": "START", "to": "a"},
                {"from": "START", "to": "b"},
                {"from": "a", "to": "c"},
                {"from": "b", "to": "c"},
                {"from": "c", "to": "d"},
                {"from": "d", "to": "END"}
            ]
        }"#,
    )
    .unwrap()
}

/// A random mutation instruction, exercising every effect variant.
pub fn random_effect(rng: &mut ChaCha8Rng, key: InstanceKey) -> agility_core::ModelEffect {
    use agility_core::ModelEffect;
    match rng.gen_range(0..6) {
        0 => ModelEffect::AddInstance { instance: random_instance(rng, key.concept.clone(), &key.id) },
        1 => ModelEffect::RemoveInstance { key },
        2 => ModelEffect::SetAttribute { key, name: "status".into(), value: random_scalar(rng) },
        3 => ModelEffect::RemoveAttribute { key, name: "status".into() },
        4 => ModelEffect::AddRelation {
            key,
            relation: Relation::new("linked_to", InstanceKey::new(Concept::Resource, "r1")),
        },
        _ => ModelEffect::RemoveRelation {
            key,
            relation: Relation::new("linked_to", InstanceKey::new(Concept::Resource, "r1")),
        },
    }
}
