//! A small provenance model: entities, step activities, usage and generation
//! statements.
//!
//! Usage statements may carry the set of element keys an activity actually
//! touched (white-box granularity). A usage without keys is coarse and is
//! treated as touching every element of the entity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{KeySet, VersionTag};

pub const ATTR_TYPE: &str = "prov:type";
pub const ATTR_VERSION: &str = "version";
/// Input slot an input entity was bound from.
pub const ATTR_SLOT: &str = "slot";
pub const TYPE_COLLECTION: &str = "prov:collection";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Input,
    Dep,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Input => "input",
            Role::Dep => "dep",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    WhiteBox,
    BlackBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvEntity {
    pub id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub is_collection: bool,
}

impl ProvEntity {
    pub fn new(id: impl Into<String>) -> Self {
        ProvEntity {
            id: id.into(),
            attributes: BTreeMap::new(),
            is_collection: false,
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn collection(mut self) -> Self {
        self.is_collection = true;
        self.attributes.insert(ATTR_TYPE.into(), TYPE_COLLECTION.into());
        self
    }

    /// `(dataset_id, sequence)` from the `version` attribute, if well formed.
    pub fn version(&self) -> Option<(String, u32)> {
        self.attributes.get(ATTR_VERSION).and_then(|v| VersionTag::parse(v))
    }

    pub fn slot(&self) -> Option<&str> {
        self.attributes.get(ATTR_SLOT).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvActivity {
    pub id: String,
    pub step_index: u32,
    pub started_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageStatement {
    pub activity_id: String,
    pub entity_id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_keys: Option<KeySet>,
}

impl UsageStatement {
    pub fn is_coarse(&self) -> bool {
        self.element_keys.is_none()
    }

    /// Coarse usages intersect every key set.
    pub fn touches_any(&self, keys: &KeySet) -> bool {
        match &self.element_keys {
            None => true,
            Some(own) => own.iter().any(|k| keys.contains(k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStatement {
    pub entity_id: String,
    pub activity_id: String,
}

#[derive(Debug, Error)]
pub enum ProvError {
    #[error("unknown {kind} id {id:?}")]
    UnknownId { kind: &'static str, id: String },
    #[error("duplicate {kind} id {id:?}")]
    Duplicate { kind: &'static str, id: String },
    #[error("element keys are not allowed in a black-box document")]
    Granularity,
    #[error("a black-box document holds exactly one activity")]
    BlackBoxActivity,
    #[error("step index {0} already used")]
    DuplicateStep(u32),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid document: {0}")]
    Invalid(String),
}

/// One invariant violation found by [`ProvDocument::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateEntity(String),
    DuplicateActivity(String),
    DuplicateStepIndex(u32),
    StepOrder { earlier: String, later: String },
    UnknownActivity { statement: &'static str, id: String },
    UnknownEntity { statement: &'static str, id: String },
    InvalidVersion { entity: String, value: String },
    BlackBoxActivityCount(usize),
    BlackBoxElementKeys { activity: String, entity: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateEntity(id) => write!(f, "duplicate entity {id}"),
            Violation::DuplicateActivity(id) => write!(f, "duplicate activity {id}"),
            Violation::DuplicateStepIndex(i) => write!(f, "duplicate step index {i}"),
            Violation::StepOrder { earlier, later } => {
                write!(f, "activity {earlier} has a lower step index but starts after {later}")
            }
            Violation::UnknownActivity { statement, id } => write!(f, "{statement} references unknown activity {id}"),
            Violation::UnknownEntity { statement, id } => write!(f, "{statement} references unknown entity {id}"),
            Violation::InvalidVersion { entity, value } => write!(f, "entity {entity} has invalid version {value:?}"),
            Violation::BlackBoxActivityCount(n) => write!(f, "black-box document has {n} activities"),
            Violation::BlackBoxElementKeys { activity, entity } => {
                write!(f, "black-box usage {activity} -> {entity} carries element keys")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct UsageFilter {
    pub role: Option<Role>,
    pub entity_id: Option<String>,
    pub element_keys_intersecting: Option<KeySet>,
}

impl UsageFilter {
    fn matches(&self, u: &UsageStatement) -> bool {
        self.role.is_none_or(|r| r == u.role)
            && self.entity_id.as_ref().is_none_or(|e| *e == u.entity_id)
            && self.element_keys_intersecting.as_ref().is_none_or(|k| u.touches_any(k))
    }
}

/// Provenance of one execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvDocument {
    pub granularity: Granularity,
    pub entities: Vec<ProvEntity>,
    pub activities: Vec<ProvActivity>,
    pub usages: Vec<UsageStatement>,
    pub generations: Vec<GenerationStatement>,
}

impl ProvDocument {
    pub fn new(granularity: Granularity) -> Self {
        ProvDocument {
            granularity,
            entities: Vec::new(),
            activities: Vec::new(),
            usages: Vec::new(),
            generations: Vec::new(),
        }
    }

    pub fn entity(&self, id: &str) -> Option<&ProvEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn activity(&self, id: &str) -> Option<&ProvActivity> {
        self.activities.iter().find(|a| a.id == id)
    }

    pub fn add_entity(&mut self, entity: ProvEntity) -> Result<(), ProvError> {
        if let Some(existing) = self.entity(&entity.id) {
            if *existing == entity {
                return Ok(());
            }
            return Err(ProvError::Duplicate {
                kind: "entity",
                id: entity.id,
            });
        }
        self.entities.push(entity);
        Ok(())
    }

    pub fn add_activity(&mut self, activity: ProvActivity) -> Result<(), ProvError> {
        if self.activity(&activity.id).is_some() {
            return Err(ProvError::Duplicate {
                kind: "activity",
                id: activity.id,
            });
        }
        if self.activities.iter().any(|a| a.step_index == activity.step_index) {
            return Err(ProvError::DuplicateStep(activity.step_index));
        }
        if self.granularity == Granularity::BlackBox && !self.activities.is_empty() {
            return Err(ProvError::BlackBoxActivity);
        }
        self.activities.push(activity);
        Ok(())
    }

    /// Records that `activity` used `entity` in `role`. Asserting an identical
    /// statement twice leaves the document unchanged.
    pub fn assert_usage(
        &mut self,
        activity: &str,
        entity: &str,
        role: Role,
        element_keys: Option<KeySet>,
    ) -> Result<(), ProvError> {
        self.require_ids(activity, entity)?;
        if element_keys.is_some() && self.granularity == Granularity::BlackBox {
            return Err(ProvError::Granularity);
        }
        let statement = UsageStatement {
            activity_id: activity.into(),
            entity_id: entity.into(),
            role,
            element_keys,
        };
        if !self.usages.contains(&statement) {
            self.usages.push(statement);
        }
        Ok(())
    }

    pub fn assert_generation(&mut self, entity: &str, activity: &str) -> Result<(), ProvError> {
        self.require_ids(activity, entity)?;
        let statement = GenerationStatement {
            entity_id: entity.into(),
            activity_id: activity.into(),
        };
        if !self.generations.contains(&statement) {
            self.generations.push(statement);
        }
        Ok(())
    }

    fn require_ids(&self, activity: &str, entity: &str) -> Result<(), ProvError> {
        if self.activity(activity).is_none() {
            return Err(ProvError::UnknownId {
                kind: "activity",
                id: activity.into(),
            });
        }
        if self.entity(entity).is_none() {
            return Err(ProvError::UnknownId {
                kind: "entity",
                id: entity.into(),
            });
        }
        Ok(())
    }

    /// Lists every invariant violation; empty iff the document is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut entity_ids = HashSet::new();
        for e in &self.entities {
            if !entity_ids.insert(e.id.as_str()) {
                out.push(Violation::DuplicateEntity(e.id.clone()));
            }
            if let Some(v) = e.attributes.get(ATTR_VERSION) {
                if VersionTag::parse(v).is_none() {
                    out.push(Violation::InvalidVersion {
                        entity: e.id.clone(),
                        value: v.clone(),
                    });
                }
            }
        }
        let mut activity_ids = HashSet::new();
        let mut steps = HashSet::new();
        for a in &self.activities {
            if !activity_ids.insert(a.id.as_str()) {
                out.push(Violation::DuplicateActivity(a.id.clone()));
            }
            if !steps.insert(a.step_index) {
                out.push(Violation::DuplicateStepIndex(a.step_index));
            }
        }
        let mut by_step: Vec<&ProvActivity> = self.activities.iter().collect();
        by_step.sort_by_key(|a| (a.step_index, a.started_at));
        for pair in by_step.windows(2) {
            if pair[0].step_index < pair[1].step_index && pair[0].started_at > pair[1].started_at {
                out.push(Violation::StepOrder {
                    earlier: pair[0].id.clone(),
                    later: pair[1].id.clone(),
                });
            }
        }
        let mut check_refs = |statement: &'static str, activity: &str, entity: &str| {
            if !activity_ids.contains(activity) {
                out.push(Violation::UnknownActivity {
                    statement,
                    id: activity.into(),
                });
            }
            if !entity_ids.contains(entity) {
                out.push(Violation::UnknownEntity {
                    statement,
                    id: entity.into(),
                });
            }
        };
        for u in &self.usages {
            check_refs("usage", &u.activity_id, &u.entity_id);
        }
        for g in &self.generations {
            check_refs("generation", &g.activity_id, &g.entity_id);
        }
        if self.granularity == Granularity::BlackBox {
            if self.activities.len() != 1 {
                out.push(Violation::BlackBoxActivityCount(self.activities.len()));
            }
            for u in self.usages.iter().filter(|u| u.element_keys.is_some()) {
                out.push(Violation::BlackBoxElementKeys {
                    activity: u.activity_id.clone(),
                    entity: u.entity_id.clone(),
                });
            }
        }
        out
    }

    /// Usages matching every supplied filter component, paired with their
    /// activity and ordered by step index.
    pub fn query_usages(&self, filter: &UsageFilter) -> Vec<(&UsageStatement, &ProvActivity)> {
        let activities: HashMap<&str, &ProvActivity> = self.activities.iter().map(|a| (a.id.as_str(), a)).collect();
        let mut hits: Vec<_> = self
            .usages
            .iter()
            .filter(|u| filter.matches(u))
            .filter_map(|u| activities.get(u.activity_id.as_str()).map(|a| (u, *a)))
            .collect();
        hits.sort_by_key(|(_, a)| a.step_index);
        hits
    }

    pub fn to_json(&self) -> Result<String, ProvError> {
        if let Some(v) = self.validate().first() {
            return Err(ProvError::Invalid(v.to_string()));
        }
        Ok(serde_json::to_string_pretty(self).expect("document serialization is infallible"))
    }

    pub fn from_json(text: &str) -> Result<Self, ProvError> {
        serde_json::from_str(text).map_err(|e| ProvError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}
