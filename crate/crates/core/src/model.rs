//! Situation models: typed instance stores with structural diffing.
//!
//! A [`SituationModel`] is a snapshot of a collaborative situation: a set of
//! typed instances (partners, risks, resources, objectives, services,
//! activities), each carrying scalar attributes and named relations to other
//! instances. Instances are addressed solely by [`InstanceKey`], so storage
//! order never influences comparison. All mutation goes through
//! [`ModelEffect`] values, which keeps every change attributable to the event
//! that carried it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

// The "relations" pseudo-attribute folds relation-set changes into the
// attribute-style accounting used by Updated differences.
pub const RELATIONS_PSEUDO_ATTRIBUTE: &str = "relations";

// ===========================================================================
// Concepts, keys, scalars
// ===========================================================================

/// Instance type within a collaboration model.
///
/// The six well-known concepts cover the usual crisis-collaboration
/// vocabulary; anything else round-trips as `Custom`. Equality and ordering
/// are by name, so a `Custom` value spelling a well-known name compares equal
/// to the corresponding variant.
#[derive(Debug, Clone)]
pub enum Concept {
    Partner,
    Risk,
    Resource,
    Objective,
    Service,
    Activity,
    Custom(String),
}

impl Concept {
    pub fn name(&self) -> &str {
        match self {
            Concept::Partner => "Partner",
            Concept::Risk => "Risk",
            Concept::Resource => "Resource",
            Concept::Objective => "Objective",
            Concept::Service => "Service",
            Concept::Activity => "Activity",
            Concept::Custom(name) => name,
        }
    }

    /// Maps well-known names onto their variants; anything else is `Custom`.
    pub fn from_name(name: &str) -> Concept {
        match name {
            "Partner" => Concept::Partner,
            "Risk" => Concept::Risk,
            "Resource" => Concept::Resource,
            "Objective" => Concept::Objective,
            "Service" => Concept::Service,
            "Activity" => Concept::Activity,
            other => Concept::Custom(other.to_string()),
        }
    }
}

impl PartialEq for Concept {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Eq for Concept {}

impl PartialOrd for Concept {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Concept {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.name().cmp(other.name())
    }
}

impl std::hash::Hash for Concept {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.name().hash(state);
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Concept {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Concept {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Ok(Concept::from_name(&name))
    }
}

/// Identity of an instance: concept plus an id unique within that concept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceKey {
    pub concept: Concept,
    pub id: String,
}

impl InstanceKey {
    pub fn new(concept: Concept, id: impl Into<String>) -> Self {
        InstanceKey { concept, id: id.into() }
    }
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.concept, self.id)
    }
}

/// Attribute or payload value: string, number, or boolean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl Scalar {
    pub fn str(value: impl Into<String>) -> Scalar {
        Scalar::Str(value.into())
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Num(n) => write!(f, "{n}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Scalar {
    fn from(value: &str) -> Self {
        Scalar::Str(value.to_string())
    }
}

impl From<String> for Scalar {
    fn from(value: String) -> Self {
        Scalar::Str(value)
    }
}

impl From<f64> for Scalar {
    fn from(value: f64) -> Self {
        Scalar::Num(value)
    }
}

impl From<bool> for Scalar {
    fn from(value: bool) -> Self {
        Scalar::Bool(value)
    }
}

/// Named, directed link from one instance to another.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Relation {
    pub name: String,
    pub target: InstanceKey,
}

impl Relation {
    pub fn new(name: impl Into<String>, target: InstanceKey) -> Self {
        Relation { name: name.into(), target }
    }
}

// serde shape: {"name": ..., "concept": ..., "id": ...}
#[derive(Serialize, Deserialize)]
struct RelationRepr {
    name: String,
    concept: Concept,
    id: String,
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RelationRepr {
            name: self.name.clone(),
            concept: self.target.concept.clone(),
            id: self.target.id.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = RelationRepr::deserialize(deserializer)?;
        Ok(Relation {
            name: repr.name,
            target: InstanceKey { concept: repr.concept, id: repr.id },
        })
    }
}

// ===========================================================================
// Instances and models
// ===========================================================================

/// One typed instance: key, scalar attributes, outgoing relations.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub key: InstanceKey,
    pub attributes: BTreeMap<String, Scalar>,
    pub relations: BTreeSet<Relation>,
}

impl Instance {
    pub fn new(concept: Concept, id: impl Into<String>) -> Self {
        Instance {
            key: InstanceKey::new(concept, id),
            attributes: BTreeMap::new(),
            relations: BTreeSet::new(),
        }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.attributes.insert(name.into(), value.into());
        self
    }

    pub fn with_relation(mut self, name: impl Into<String>, target: InstanceKey) -> Self {
        self.relations.insert(Relation::new(name, target));
        self
    }
}

// serde shape: {"concept", "id", "attributes", "relations"}
#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    concept: Concept,
    id: String,
    #[serde(default)]
    attributes: BTreeMap<String, Scalar>,
    #[serde(default)]
    relations: Vec<Relation>,
}

impl Serialize for Instance {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        InstanceRepr {
            concept: self.key.concept.clone(),
            id: self.key.id.clone(),
            attributes: self.attributes.clone(),
            relations: self.relations.iter().cloned().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Instance {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = InstanceRepr::deserialize(deserializer)?;
        Ok(Instance {
            key: InstanceKey { concept: repr.concept, id: repr.id },
            attributes: repr.attributes,
            relations: repr.relations.into_iter().collect(),
        })
    }
}

/// Error raised when an effect cannot be applied to a model.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("effect targets unknown instance {0}")]
    UnknownInstance(InstanceKey),
    #[error("instance {0} already exists")]
    DuplicateInstance(InstanceKey),
}

/// Single attributable change to a situation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ModelEffect {
    AddInstance {
        instance: Instance,
    },
    RemoveInstance {
        #[serde(flatten)]
        key: InstanceKey,
    },
    SetAttribute {
        #[serde(flatten)]
        key: InstanceKey,
        name: String,
        value: Scalar,
    },
    RemoveAttribute {
        #[serde(flatten)]
        key: InstanceKey,
        name: String,
    },
    AddRelation {
        #[serde(flatten)]
        key: InstanceKey,
        relation: Relation,
    },
    RemoveRelation {
        #[serde(flatten)]
        key: InstanceKey,
        relation: Relation,
    },
}

/// Warning from [`SituationModel::validate`]; never fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationWarning {
    pub key: InstanceKey,
    pub relation: Relation,
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "instance {} relation '{}' targets missing instance {}",
            self.key, self.relation.name, self.relation.target
        )
    }
}

/// Snapshot of a collaborative situation.
///
/// Two models constructed from the same instances in any order are equal, and
/// equal models serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SituationModel {
    label: String,
    instances: BTreeMap<InstanceKey, Instance>,
}

impl SituationModel {
    pub fn new(label: impl Into<String>) -> Self {
        SituationModel { label: label.into(), instances: BTreeMap::new() }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, key: &InstanceKey) -> Option<&Instance> {
        self.instances.get(key)
    }

    pub fn contains(&self, key: &InstanceKey) -> bool {
        self.instances.contains_key(key)
    }

    /// Instances in canonical (concept, id) order.
    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    /// Inserts an instance directly; used when building initial models.
    pub fn insert(&mut self, instance: Instance) -> Result<(), ModelError> {
        if self.instances.contains_key(&instance.key) {
            return Err(ModelError::DuplicateInstance(instance.key));
        }
        self.instances.insert(instance.key.clone(), instance);
        Ok(())
    }

    /// Applies one effect. On error the model is unchanged.
    ///
    /// Set-semantics edits are idempotent: re-adding an existing relation or
    /// removing an absent attribute/relation succeeds without change. Only
    /// instance-level violations are errors.
    pub fn apply_effect(&mut self, effect: &ModelEffect) -> Result<(), ModelError> {
        match effect {
            ModelEffect::AddInstance { instance } => self.insert(instance.clone()),
            ModelEffect::RemoveInstance { key } => match self.instances.remove(key) {
                Some(_) => Ok(()),
                None => Err(ModelError::UnknownInstance(key.clone())),
            },
            ModelEffect::SetAttribute { key, name, value } => {
                let instance = self.instance_mut(key)?;
                instance.attributes.insert(name.clone(), value.clone());
                Ok(())
            }
            ModelEffect::RemoveAttribute { key, name } => {
                let instance = self.instance_mut(key)?;
                instance.attributes.remove(name);
                Ok(())
            }
            ModelEffect::AddRelation { key, relation } => {
                let instance = self.instance_mut(key)?;
                instance.relations.insert(relation.clone());
                Ok(())
            }
            ModelEffect::RemoveRelation { key, relation } => {
                let instance = self.instance_mut(key)?;
                instance.relations.remove(relation);
                Ok(())
            }
        }
    }

    fn instance_mut(&mut self, key: &InstanceKey) -> Result<&mut Instance, ModelError> {
        self.instances
            .get_mut(key)
            .ok_or_else(|| ModelError::UnknownInstance(key.clone()))
    }

    /// Deep copy under a new label. The copy shares no state with the
    /// original; afterwards `diff(original, copy)` is empty.
    pub fn clone_with_label(&self, label: impl Into<String>) -> SituationModel {
        SituationModel { label: label.into(), instances: self.instances.clone() }
    }

    /// Reports relations whose target instance is missing from the model.
    pub fn validate(&self) -> Vec<ValidationWarning> {
        let mut warnings = Vec::new();
        for instance in self.instances.values() {
            for relation in &instance.relations {
                if !self.instances.contains_key(&relation.target) {
                    warnings.push(ValidationWarning {
                        key: instance.key.clone(),
                        relation: relation.clone(),
                    });
                }
            }
        }
        warnings
    }

    /// Canonical JSON: instances, attributes, and relations in sorted order,
    /// so equal models always produce identical bytes.
    pub fn to_canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("model serialization");
        text.push('\n');
        text
    }

    /// Parses a model file, rejecting duplicate (concept, id) pairs.
    pub fn parse(text: &str) -> Result<SituationModel, ParseError> {
        serde_json::from_str(text).map_err(ParseError::from)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    label: String,
    instances: Vec<Instance>,
}

impl Serialize for SituationModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ModelRepr {
            label: self.label.clone(),
            instances: self.instances.values().cloned().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SituationModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ModelRepr::deserialize(deserializer)?;
        let mut model = SituationModel::new(repr.label);
        for instance in repr.instances {
            let key = instance.key.clone();
            if model.insert(instance).is_err() {
                return Err(D::Error::custom(format!("duplicate instance {key}")));
            }
        }
        Ok(model)
    }
}

/// Parse failure with the position serde_json reported, when available.
#[derive(Debug, Error)]
#[error("model parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub message: String,
    pub line: usize,
    pub column: usize,
}

impl From<serde_json::Error> for ParseError {
    fn from(err: serde_json::Error) -> Self {
        ParseError { message: err.to_string(), line: err.line(), column: err.column() }
    }
}

// ===========================================================================
// Diffing
// ===========================================================================

/// What happened to one instance between two model versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffOp {
    Added,
    Deleted,
    Updated,
}

impl fmt::Display for DiffOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffOp::Added => f.write_str("added"),
            DiffOp::Deleted => f.write_str("deleted"),
            DiffOp::Updated => f.write_str("updated"),
        }
    }
}

/// One instance-level difference between an expected and an observed model.
///
/// `attr_total` counts the distinct attribute names across both versions of
/// the instance (plus the relations pseudo-attribute when relation sets
/// differ); it is zero for Added and Deleted entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    #[serde(flatten)]
    pub key: InstanceKey,
    pub operation: DiffOp,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub changed_attributes: BTreeSet<String>,
    #[serde(default)]
    pub attr_total: usize,
}

impl Difference {
    pub fn added(key: InstanceKey) -> Difference {
        Difference { key, operation: DiffOp::Added, changed_attributes: BTreeSet::new(), attr_total: 0 }
    }

    pub fn deleted(key: InstanceKey) -> Difference {
        Difference { key, operation: DiffOp::Deleted, changed_attributes: BTreeSet::new(), attr_total: 0 }
    }
}

/// Structural diff keyed by (concept, id), in canonical key order.
///
/// Instances present only in `field` are Added, only in `expected` are
/// Deleted, and present in both with unequal content are Updated. The diff is
/// position-blind: it depends only on the instance sets, never on storage or
/// serialization order.
pub fn diff(expected: &SituationModel, field: &SituationModel) -> Vec<Difference> {
    let mut differences = Vec::new();
    let mut expected_iter = expected.instances.iter().peekable();
    let mut field_iter = field.instances.iter().peekable();

    loop {
        match (expected_iter.peek(), field_iter.peek()) {
            (Some((ek, _)), Some((fk, _))) => match ek.cmp(fk) {
                std::cmp::Ordering::Less => {
                    let (key, _) = expected_iter.next().unwrap();
                    differences.push(Difference::deleted(key.clone()));
                }
                std::cmp::Ordering::Greater => {
                    let (key, _) = field_iter.next().unwrap();
                    differences.push(Difference::added(key.clone()));
                }
                std::cmp::Ordering::Equal => {
                    let (key, before) = expected_iter.next().unwrap();
                    let (_, after) = field_iter.next().unwrap();
                    if let Some(diff) = diff_instance(key, before, after) {
                        differences.push(diff);
                    }
                }
            },
            (Some(_), None) => {
                let (key, _) = expected_iter.next().unwrap();
                differences.push(Difference::deleted(key.clone()));
            }
            (None, Some(_)) => {
                let (key, _) = field_iter.next().unwrap();
                differences.push(Difference::added(key.clone()));
            }
            (None, None) => break,
        }
    }

    differences
}

fn diff_instance(key: &InstanceKey, before: &Instance, after: &Instance) -> Option<Difference> {
    let mut changed = BTreeSet::new();
    let mut names: BTreeSet<&str> = BTreeSet::new();
    names.extend(before.attributes.keys().map(String::as_str));
    names.extend(after.attributes.keys().map(String::as_str));

    for name in &names {
        if before.attributes.get(*name) != after.attributes.get(*name) {
            changed.insert(name.to_string());
        }
    }

    let mut attr_total = names.len();
    if before.relations != after.relations {
        changed.insert(RELATIONS_PSEUDO_ATTRIBUTE.to_string());
        if !names.contains(RELATIONS_PSEUDO_ATTRIBUTE) {
            attr_total += 1;
        }
    }

    if changed.is_empty() {
        return None;
    }
    Some(Difference {
        key: key.clone(),
        operation: DiffOp::Updated,
        changed_attributes: changed,
        attr_total,
    })
}

// ===========================================================================
// Tests
// ===========================================================================
