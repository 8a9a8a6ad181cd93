//! Linear pipelines `P = P_r ∘ … ∘ P_1` executed with provenance capture,
//! step-boundary caching and cost accounting.
//!
//! Steps communicate through named slots. A step reads its input slots and
//! the dataset versions bound to its dependency slots, writes its output
//! slots, and reports which elements it actually touched. Steps that cannot
//! report element keys return [`UsageReport::Coarse`] and are recorded with
//! coarse usages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{HistoryDb, HistoryError, HistoryRecord, Producer, CacheMode, CostRecord};
use crate::prov::{
    Granularity, ProvActivity, ProvDocument, ProvEntity, ProvError, Role, ATTR_SLOT, ATTR_TYPE, ATTR_VERSION,
};
use crate::store::{DatasetVersion, KeySet, Registry, VersionTag};
use crate::value::{ContentHash, Value};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline: {0}")]
    InvalidSpec(String),
    #[error("input slot {0} is not bound")]
    UnboundInput(String),
    #[error("dependency {0} is not bound")]
    UnboundDependency(String),
    #[error("version {0} is not registered")]
    UnknownVersion(String),
    #[error("step {step} (#{step_index}) failed: {message}")]
    StepFailed { step: String, step_index: u32, message: String },
    #[error("step {step} did not produce slot {slot}")]
    MissingOutput { step: String, slot: String },
    #[error("cannot resume at step {start}: {reason}")]
    InvalidStart { start: u32, reason: String },
    #[error("cached values missing: {}", display_hashes(.hashes))]
    MissingCache { hashes: Vec<ContentHash> },
    #[error("cached value {hash} is not decodable: {message}")]
    Decode { hash: ContentHash, message: String },
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Prov(#[from] ProvError),
}

fn display_hashes(hashes: &[ContentHash]) -> String {
    hashes.iter().map(ContentHash::as_str).collect::<Vec<_>>().join(", ")
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transparency {
    #[default]
    WhiteBox,
    BlackBox,
}

impl std::str::FromStr for Transparency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "white" | "white-box" => Ok(Transparency::WhiteBox),
            "black" | "black-box" => Ok(Transparency::BlackBox),
            other => Err(format!("unknown transparency {other:?} (expected white or black)")),
        }
    }
}

/// What a step saw while it ran.
pub struct StepContext<'a> {
    inputs: BTreeMap<&'a str, &'a Value>,
    deps: BTreeMap<&'a str, &'a DatasetVersion>,
}

impl<'a> StepContext<'a> {
    pub fn input(&self, slot: &str) -> Result<&'a Value, String> {
        self.inputs.get(slot).copied().ok_or_else(|| format!("no input slot {slot}"))
    }

    pub fn dep(&self, dataset_id: &str) -> Result<&'a DatasetVersion, String> {
        self.deps
            .get(dataset_id)
            .copied()
            .ok_or_else(|| format!("no dependency {dataset_id}"))
    }
}

/// One element-level usage reported by a step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportedUsage {
    pub role: Role,
    /// Input slot or dataset id the usage refers to.
    pub source: String,
    /// Entity name to record instead of the source's own name, for steps
    /// that use a derived view of an input (e.g. the selected subset of a
    /// variant set).
    pub view: Option<String>,
    /// Elements touched; may be empty when the step touched nothing.
    pub keys: KeySet,
}

impl ReportedUsage {
    pub fn dep(dataset_id: impl Into<String>, keys: KeySet) -> Self {
        ReportedUsage {
            role: Role::Dep,
            source: dataset_id.into(),
            view: None,
            keys,
        }
    }

    pub fn input(slot: impl Into<String>, keys: KeySet) -> Self {
        ReportedUsage {
            role: Role::Input,
            source: slot.into(),
            view: None,
            keys,
        }
    }

    pub fn via(mut self, view: impl Into<String>) -> Self {
        self.view = Some(view.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UsageReport {
    /// One coarse usage per input and dependency slot.
    Coarse,
    /// Exactly the listed usages.
    Fine(Vec<ReportedUsage>),
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub values: BTreeMap<String, Value>,
    pub usage: UsageReport,
}

pub type StepFn = Arc<dyn Fn(&StepContext<'_>) -> Result<StepOutput, String> + Send + Sync>;

#[derive(Clone)]
pub struct StepSpec {
    pub name: String,
    pub step_index: u32,
    pub input_slots: Vec<String>,
    pub dep_slots: Vec<String>,
    pub output_slots: Vec<String>,
    pub apply: StepFn,
}

impl fmt::Debug for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepSpec")
            .field("name", &self.name)
            .field("step_index", &self.step_index)
            .field("input_slots", &self.input_slots)
            .field("dep_slots", &self.dep_slots)
            .field("output_slots", &self.output_slots)
            .finish_non_exhaustive()
    }
}

impl StepSpec {
    pub fn new<F>(name: &str, step_index: u32, inputs: &[&str], deps: &[&str], outputs: &[&str], apply: F) -> Self
    where
        F: Fn(&StepContext<'_>) -> Result<StepOutput, String> + Send + Sync + 'static,
    {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        StepSpec {
            name: name.into(),
            step_index,
            input_slots: owned(inputs),
            dep_slots: owned(deps),
            output_slots: owned(outputs),
            apply: Arc::new(apply),
        }
    }
}

/// How a dataset, slot or view appears as a provenance entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityName {
    pub id: String,
    pub prov_type: Option<String>,
}

pub type Outputs = BTreeMap<String, Value>;

pub fn outputs_bytes(outputs: &Outputs) -> Vec<u8> {
    serde_json::to_vec(outputs).expect("output serialization is infallible")
}

#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub program_id: String,
    pub program_version: String,
    pub inputs: Vec<String>,
    pub steps: Vec<StepSpec>,
    pub final_outputs: Vec<String>,
    entity_names: BTreeMap<String, EntityName>,
}

impl PipelineSpec {
    /// Checks that step indices run `0..r` in order, every consumed slot is
    /// a pipeline input or produced by an earlier step, and every final
    /// output is available.
    pub fn new(
        program_id: &str,
        inputs: &[&str],
        steps: Vec<StepSpec>,
        final_outputs: &[&str],
    ) -> Result<Self> {
        let spec = PipelineSpec {
            program_id: program_id.into(),
            program_version: "1".into(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            steps,
            final_outputs: final_outputs.iter().map(|s| s.to_string()).collect(),
            entity_names: BTreeMap::new(),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_version(mut self, version: &str) -> Self {
        self.program_version = version.into();
        self
    }

    /// Names the provenance entity recorded for a dataset, slot or view.
    pub fn name_entity(mut self, source: &str, id: &str, prov_type: Option<&str>) -> Self {
        self.entity_names.insert(
            source.into(),
            EntityName {
                id: id.into(),
                prov_type: prov_type.map(str::to_string),
            },
        );
        self
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidSpec(m));
        let mut available: BTreeSet<&str> = self.inputs.iter().map(String::as_str).collect();
        if available.len() != self.inputs.len() {
            return bad("duplicate input slot".into());
        }
        let mut names = BTreeSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            if step.step_index as usize != i {
                return bad(format!("step {} has index {}, expected {i}", step.name, step.step_index));
            }
            if !names.insert(step.name.as_str()) {
                return bad(format!("duplicate step name {}", step.name));
            }
            for slot in &step.input_slots {
                if !available.contains(slot.as_str()) {
                    return bad(format!("step {} consumes {slot} before it is produced", step.name));
                }
            }
            for slot in &step.output_slots {
                if !available.insert(slot.as_str()) {
                    return bad(format!("slot {slot} produced twice"));
                }
            }
        }
        for out in &self.final_outputs {
            if !available.contains(out.as_str()) {
                return bad(format!("final output {out} is never produced"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, step_index: u32) -> Option<&StepSpec> {
        self.steps.get(step_index as usize)
    }

    pub fn step_by_name(&self, name: &str) -> Option<&StepSpec> {
        self.steps.iter().find(|s| s.name == name)
    }

    /// Every dataset id any step depends on.
    pub fn dependencies(&self) -> BTreeSet<&str> {
        self.steps.iter().flat_map(|s| s.dep_slots.iter().map(String::as_str)).collect()
    }

    /// Slots that must be available before `start` runs: consumed by steps
    /// at or after `start` but not produced by them first.
    pub fn required_slots(&self, start: u32) -> Vec<String> {
        let mut produced = BTreeSet::new();
        let mut required = Vec::new();
        for step in self.steps.iter().skip(start as usize) {
            for slot in &step.input_slots {
                if !produced.contains(slot) && !required.contains(slot) {
                    required.push(slot.clone());
                }
            }
            produced.extend(step.output_slots.iter().cloned());
        }
        for out in &self.final_outputs {
            if !produced.contains(out) && !required.contains(out) {
                required.push(out.clone());
            }
        }
        required
    }

    fn entity_name(&self, source: &str) -> EntityName {
        self.entity_names.get(source).cloned().unwrap_or_else(|| EntityName {
            id: source.into(),
            prov_type: None,
        })
    }

    fn dep_entity(&self, tag: &VersionTag) -> ProvEntity {
        let name = self.entity_name(&tag.dataset_id);
        ProvEntity::new(name.id)
            .with_attr(ATTR_TYPE, name.prov_type.unwrap_or_else(|| tag.dataset_id.clone()))
            .with_attr(ATTR_VERSION, tag.to_string())
    }

    fn input_entity(&self, name_source: &str, slot: &str, value: Option<&Value>) -> ProvEntity {
        let name = self.entity_name(name_source);
        let mut e = ProvEntity::new(name.id);
        if matches!(value, Some(Value::Set(_) | Value::Map(_))) {
            e = e.collection();
        }
        if let Some(t) = name.prov_type {
            e = e.with_attr(ATTR_TYPE, t);
        }
        e.with_attr(ATTR_SLOT, slot)
    }
}

/// Arguments of one execution.
#[derive(Debug, Clone, Default)]
pub struct RunRequest {
    pub inputs: BTreeMap<String, Value>,
    pub deps: BTreeMap<String, VersionTag>,
    pub transparency: Transparency,
    pub subject: Option<String>,
    /// Record this run replaces, when it is a re-execution.
    pub supersedes: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub outputs: Outputs,
    pub record: HistoryRecord,
}

struct Execution<'a> {
    spec: &'a PipelineSpec,
    record_id: String,
    white_box: bool,
    cache_mode: CacheMode,
    versions: BTreeMap<String, Arc<DatasetVersion>>,
    tags: &'a BTreeMap<String, VersionTag>,
    slots: BTreeMap<String, Value>,
    boundary_refs: BTreeMap<String, ContentHash>,
    prov: ProvDocument,
    invoked: u32,
}

impl<'a> Execution<'a> {
    fn new(
        spec: &'a PipelineSpec,
        deps: &'a BTreeMap<String, VersionTag>,
        transparency: Transparency,
        registry: &Registry,
        db: &HistoryDb,
    ) -> Result<Self> {
        let mut versions = BTreeMap::new();
        for ds in spec.dependencies() {
            let tag = deps.get(ds).ok_or_else(|| PipelineError::UnboundDependency(ds.into()))?;
            if tag.dataset_id != ds {
                return Err(PipelineError::InvalidSpec(format!("dependency {ds} bound to {tag}")));
            }
            let v = registry.get(tag).ok_or_else(|| PipelineError::UnknownVersion(tag.to_string()))?;
            versions.insert(ds.to_string(), v);
        }
        let white_box = transparency == Transparency::WhiteBox;
        Ok(Execution {
            spec,
            record_id: db.next_record_id(),
            white_box,
            cache_mode: db.cache_mode(),
            versions,
            tags: deps,
            slots: BTreeMap::new(),
            boundary_refs: BTreeMap::new(),
            prov: ProvDocument::new(if white_box {
                Granularity::WhiteBox
            } else {
                Granularity::BlackBox
            }),
            invoked: 0,
        })
    }

    fn run_steps(&mut self, start: u32, db: &mut HistoryDb) -> Result<()> {
        for step in self.spec.steps.iter().skip(start as usize) {
            let ctx = StepContext {
                inputs: step
                    .input_slots
                    .iter()
                    .map(|s| (s.as_str(), &self.slots[s]))
                    .collect(),
                deps: step
                    .dep_slots
                    .iter()
                    .map(|d| (d.as_str(), &*self.versions[d]))
                    .collect(),
            };
            self.invoked += 1;
            let out = (step.apply)(&ctx).map_err(|message| PipelineError::StepFailed {
                step: step.name.clone(),
                step_index: step.step_index,
                message,
            })?;
            if self.white_box {
                self.record_step(step, &out.usage)?;
            }
            let mut values = out.values;
            for slot in &step.output_slots {
                let value = values.remove(slot).ok_or_else(|| PipelineError::MissingOutput {
                    step: step.name.clone(),
                    slot: slot.clone(),
                })?;
                if self.white_box {
                    let bytes = value.canonical_bytes();
                    let hash = ContentHash::of(&bytes);
                    if self.cache_mode == CacheMode::Full {
                        db.cache_put(&bytes, self.producer(step.step_index))?;
                    }
                    self.boundary_refs.insert(slot.clone(), hash);
                }
                self.slots.insert(slot.clone(), value);
            }
        }
        Ok(())
    }

    fn producer(&self, step_index: u32) -> Producer {
        Producer {
            record_id: self.record_id.clone(),
            step_index,
        }
    }

    fn record_step(&mut self, step: &StepSpec, usage: &UsageReport) -> Result<()> {
        self.prov.add_activity(ProvActivity {
            id: step.name.clone(),
            step_index: step.step_index,
            started_at: step.step_index as u64,
        })?;
        let reported: Vec<ReportedUsage> = match usage {
            UsageReport::Coarse => Vec::new(),
            UsageReport::Fine(list) => list.clone(),
        };
        let coarse = matches!(usage, UsageReport::Coarse);
        let mut statements: Vec<(Role, String, Option<String>, Option<KeySet>)> = Vec::new();
        if coarse {
            for slot in &step.input_slots {
                statements.push((Role::Input, slot.clone(), None, None));
            }
            for ds in &step.dep_slots {
                statements.push((Role::Dep, ds.clone(), None, None));
            }
        } else {
            for r in reported {
                let declared = match r.role {
                    Role::Input => step.input_slots.contains(&r.source),
                    Role::Dep => step.dep_slots.contains(&r.source),
                };
                if !declared {
                    return Err(PipelineError::StepFailed {
                        step: step.name.clone(),
                        step_index: step.step_index,
                        message: format!("reported usage of undeclared {} {}", r.role, r.source),
                    });
                }
                statements.push((r.role, r.source, r.view, Some(r.keys)));
            }
        }
        for (role, source, view, keys) in statements {
            let entity = match role {
                Role::Dep => self.spec.dep_entity(&self.tags[&source]),
                Role::Input => {
                    let name_source = view.as_deref().unwrap_or(&source);
                    self.spec.input_entity(name_source, &source, self.slots.get(&source))
                }
            };
            let id = entity.id.clone();
            self.prov.add_entity(entity)?;
            self.prov.assert_usage(&step.name, &id, role, keys)?;
        }
        Ok(())
    }

    fn finish(
        mut self,
        db: &mut HistoryDb,
        input_refs: BTreeMap<String, ContentHash>,
        supersedes: Option<String>,
        subject: Option<String>,
        started: Instant,
    ) -> Result<RunOutcome> {
        let outputs: Outputs = self
            .spec
            .final_outputs
            .iter()
            .map(|s| (s.clone(), self.slots[s].clone()))
            .collect();
        let last_step = self.spec.steps.len().saturating_sub(1) as u32;
        let output_ref = db.cache_put(&outputs_bytes(&outputs), self.producer(last_step))?;

        if self.white_box {
            for out in &self.spec.final_outputs {
                if let Some(step) = self.spec.steps.iter().find(|s| s.output_slots.contains(out)) {
                    if self.prov.activity(&step.name).is_some() {
                        let mut entity = self.spec.input_entity(out, out, self.slots.get(out));
                        entity.attributes.remove(ATTR_SLOT);
                        let id = entity.id.clone();
                        if self.prov.entity(&id).is_none() {
                            self.prov.add_entity(entity)?;
                        }
                        self.prov.assert_generation(&id, &step.name)?;
                    }
                }
            }
        } else {
            self.record_black_box(&outputs)?;
        }

        let record = HistoryRecord {
            record_id: self.record_id.clone(),
            execution_version: 0,
            program_id: self.spec.program_id.clone(),
            program_version: self.spec.program_version.clone(),
            subject,
            input_refs,
            boundary_refs: self.boundary_refs,
            dependency_tags: self.tags.values().cloned().collect(),
            prov_ref: String::new(),
            output_ref,
            cost: CostRecord::for_steps(self.invoked, started.elapsed().as_micros() as u64),
            supersedes,
        };
        let id = db.append_record(record, self.prov)?;
        let record = db.record(&id).expect("just appended").clone();
        Ok(RunOutcome { outputs, record })
    }

    fn record_black_box(&mut self, outputs: &Outputs) -> Result<()> {
        let activity = self.spec.program_id.clone();
        self.prov.add_activity(ProvActivity {
            id: activity.clone(),
            step_index: 0,
            started_at: 0,
        })?;
        for slot in &self.spec.inputs {
            let entity = self.spec.input_entity(slot, slot, self.slots.get(slot));
            let id = entity.id.clone();
            self.prov.add_entity(entity)?;
            self.prov.assert_usage(&activity, &id, Role::Input, None)?;
        }
        for tag in self.tags.values() {
            if !self.versions.contains_key(&tag.dataset_id) {
                continue;
            }
            let entity = self.spec.dep_entity(tag);
            let id = entity.id.clone();
            self.prov.add_entity(entity)?;
            self.prov.assert_usage(&activity, &id, Role::Dep, None)?;
        }
        for out in outputs.keys() {
            let mut entity = self.spec.input_entity(out, out, outputs.get(out));
            entity.attributes.remove(ATTR_SLOT);
            let id = entity.id.clone();
            if self.prov.entity(&id).is_none() {
                self.prov.add_entity(entity)?;
                self.prov.assert_generation(&id, &activity)?;
            }
        }
        Ok(())
    }
}

/// Executes every step of `spec` and appends a history record.
pub fn run(spec: &PipelineSpec, req: &RunRequest, registry: &Registry, db: &mut HistoryDb) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut exec = Execution::new(spec, &req.deps, req.transparency, registry, db)?;
    let mut input_refs = BTreeMap::new();
    for slot in &spec.inputs {
        let value = req
            .inputs
            .get(slot)
            .ok_or_else(|| PipelineError::UnboundInput(slot.clone()))?;
        let hash = db.cache_put(&value.canonical_bytes(), exec.producer(0))?;
        input_refs.insert(slot.clone(), hash);
        exec.slots.insert(slot.clone(), value.clone());
    }
    exec.run_steps(0, db)?;
    exec.finish(db, input_refs, req.supersedes.clone(), req.subject.clone(), started)
}

fn load_value(db: &HistoryDb, hash: &ContentHash) -> Result<Option<Value>> {
    match db.cache_get(hash)? {
        None => Ok(None),
        Some(bytes) => Value::from_canonical_bytes(&bytes)
            .map(Some)
            .map_err(|e| PipelineError::Decode {
                hash: hash.clone(),
                message: e.to_string(),
            }),
    }
}

/// Decodes the final outputs of a stored record from the cache.
pub fn load_outputs(db: &HistoryDb, record: &HistoryRecord) -> Result<Outputs> {
    let bytes = db
        .cache_get(&record.output_ref)?
        .ok_or_else(|| PipelineError::MissingCache {
            hashes: vec![record.output_ref.clone()],
        })?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Decode {
        hash: record.output_ref.clone(),
        message: e.to_string(),
    })
}

/// Decodes the original inputs of a stored record from the cache.
pub fn load_inputs(db: &HistoryDb, record: &HistoryRecord) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    let mut missing = Vec::new();
    for (slot, hash) in &record.input_refs {
        match load_value(db, hash)? {
            Some(v) => {
                out.insert(slot.clone(), v);
            }
            None => missing.push(hash.clone()),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(PipelineError::MissingCache { hashes: missing })
    }
}

/// Hashes needed to resume `record` at `start` that the cache cannot supply.
/// Slots in `overrides` are supplied by the caller and never block.
pub fn missing_for_resume(
    spec: &PipelineSpec,
    record: &HistoryRecord,
    start: u32,
    overrides: &BTreeMap<String, Value>,
    db: &HistoryDb,
) -> Result<Vec<ContentHash>> {
    let mut missing = Vec::new();
    for slot in spec.required_slots(start) {
        if overrides.contains_key(&slot) {
            continue;
        }
        match record.slot_ref(&slot) {
            Some(hash) => {
                if !db.cache_contains(hash)? {
                    missing.push(hash.clone());
                }
            }
            None => {
                return Err(PipelineError::InvalidStart {
                    start,
                    reason: format!("record {} has no reference for slot {slot}", record.record_id),
                })
            }
        }
    }
    Ok(missing)
}

/// Re-executes steps `start..r` of a white-box record, reading everything
/// upstream of `start` from the cache. `deps` binds every dataset; only
/// datasets used at or after `start` may differ from the original record.
/// `overrides` replaces original input values consumed at or after `start`.
///
/// The new record's provenance keeps the reused upstream activities so that
/// it stays subject to future scoping.
pub fn resume(
    spec: &PipelineSpec,
    original: &HistoryRecord,
    start: u32,
    deps: &BTreeMap<String, VersionTag>,
    overrides: &BTreeMap<String, Value>,
    registry: &Registry,
    db: &mut HistoryDb,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let invalid = |reason: String| PipelineError::InvalidStart { start, reason };
    if start as usize >= spec.steps.len() {
        return Err(invalid(format!("pipeline has {} steps", spec.steps.len())));
    }
    let original_prov = db
        .prov(&original.record_id)
        .ok_or_else(|| invalid(format!("no provenance for {}", original.record_id)))?
        .clone();
    if original_prov.granularity != Granularity::WhiteBox {
        return Err(invalid("black-box records can only be re-executed in full".into()));
    }
    for step in &spec.steps[..start as usize] {
        for ds in &step.dep_slots {
            if original.dependency_tag(ds) != deps.get(ds) {
                return Err(invalid(format!("upstream step {} uses changed dataset {ds}", step.name)));
            }
        }
        for slot in &step.input_slots {
            if overrides.contains_key(slot) {
                return Err(invalid(format!("upstream step {} consumes replaced input {slot}", step.name)));
            }
        }
    }
    for slot in overrides.keys() {
        if !spec.inputs.contains(slot) {
            return Err(invalid(format!("{slot} is not a pipeline input")));
        }
    }

    let missing = missing_for_resume(spec, original, start, overrides, db)?;
    if !missing.is_empty() {
        return Err(PipelineError::MissingCache { hashes: missing });
    }

    let mut exec = Execution::new(spec, deps, Transparency::WhiteBox, registry, db)?;
    for slot in spec.required_slots(start) {
        let value = match overrides.get(&slot) {
            Some(v) => v.clone(),
            None => {
                let hash = original.slot_ref(&slot).expect("checked above");
                load_value(db, hash)?.expect("checked above")
            }
        };
        exec.slots.insert(slot, value);
    }

    let mut input_refs = original.input_refs.clone();
    for (slot, value) in overrides {
        let hash = db.cache_put(&value.canonical_bytes(), exec.producer(start))?;
        input_refs.insert(slot.clone(), hash);
    }
    for step in &spec.steps[..start as usize] {
        for slot in &step.output_slots {
            if let Some(h) = original.boundary_refs.get(slot) {
                exec.boundary_refs.insert(slot.clone(), h.clone());
            }
        }
    }

    // carry the reused upstream part of the original provenance
    let upstream: BTreeSet<&str> = spec.steps[..start as usize].iter().map(|s| s.name.as_str()).collect();
    for activity in original_prov.activities.iter().filter(|a| upstream.contains(a.id.as_str())) {
        exec.prov.add_activity(activity.clone())?;
    }
    for usage in original_prov
        .usages
        .iter()
        .filter(|u| upstream.contains(u.activity_id.as_str()))
    {
        let entity = original_prov.entity(&usage.entity_id).expect("stored provenance is valid");
        exec.prov.add_entity(entity.clone())?;
        exec.prov
            .assert_usage(&usage.activity_id, &usage.entity_id, usage.role, usage.element_keys.clone())?;
    }

    exec.run_steps(start, db)?;
    exec.finish(
        db,
        input_refs,
        Some(original.record_id.clone()),
        original.subject.clone(),
        started,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::key_set;

    fn registry() -> (Registry, VersionTag, VersionTag) {
        let mut reg = Registry::new();
        let t1 = reg.register_tsv("lookup", Some("v1"), "a\t1\nb\t2\n").unwrap();
        let t2 = reg.register_tsv("lookup", Some("v2"), "a\t10\nb\t2\n").unwrap();
        (reg, t1, t2)
    }

    /// step 0: upper-case the words; step 1: look each word up.
    fn toy() -> PipelineSpec {
        let upper = StepSpec::new("upper", 0, &["words"], &[], &["upper"], |ctx| {
            let words = ctx.input("words")?.as_set().ok_or("words must be a set")?;
            Ok(StepOutput {
                values: [("upper".to_string(), Value::set(words.iter().map(|w| w.to_uppercase())))].into(),
                usage: UsageReport::Fine(vec![ReportedUsage::input("words", key_set(words))]),
            })
        });
        let lookup = StepSpec::new("lookup", 1, &["words", "upper"], &["lookup"], &["found"], |ctx| {
            let words = ctx.input("words")?.as_set().ok_or("words must be a set")?;
            let table = ctx.dep("lookup")?;
            let found: BTreeMap<String, String> = words
                .iter()
                .filter_map(|w| table.get(w).map(|v| (w.clone(), v.as_str().to_string())))
                .collect();
            Ok(StepOutput {
                values: [("found".to_string(), Value::Map(found.clone()))].into(),
                usage: UsageReport::Fine(vec![
                    ReportedUsage::dep("lookup", key_set(found.keys())),
                    ReportedUsage::input("words", key_set(words)),
                ]),
            })
        });
        PipelineSpec::new("toy", &["words"], vec![upper, lookup], &["found", "upper"]).unwrap()
    }

    fn request(tag: &VersionTag, transparency: Transparency) -> RunRequest {
        RunRequest {
            inputs: [("words".to_string(), Value::set(["a", "c"]))].into(),
            deps: [("lookup".to_string(), tag.clone())].into(),
            transparency,
            subject: Some("s1".into()),
            supersedes: None,
        }
    }

    #[test]
    fn spec_validation() {
        let bad_index = StepSpec::new("s", 1, &[], &[], &[], |_| unreachable!());
        assert!(matches!(
            PipelineSpec::new("p", &[], vec![bad_index], &[]),
            Err(PipelineError::InvalidSpec(_))
        ));
        let consumes_future = StepSpec::new("s", 0, &["later"], &[], &["x"], |_| unreachable!());
        assert!(PipelineSpec::new("p", &[], vec![consumes_future], &[]).is_err());
        assert!(PipelineSpec::new("p", &["x"], vec![], &["y"]).is_err());
    }

    #[test]
    fn white_box_run_records_steps() {
        let (reg, t1, _) = registry();
        let mut db = HistoryDb::new();
        let out = run(&toy(), &request(&t1, Transparency::WhiteBox), &reg, &mut db).unwrap();
        assert_eq!(out.outputs["found"], Value::map([("a", "1")]));
        assert_eq!(out.record.cost.steps_executed, 2);
        let prov = db.prov(&out.record.record_id).unwrap();
        let steps: Vec<_> = prov.activities.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(steps, vec!["upper", "lookup"]);
        assert!(prov.validate().is_empty());
        assert_eq!(out.record.boundary_refs.len(), 2);
        assert_eq!(prov.generations.len(), 2);
    }

    #[test]
    fn black_box_run_is_coarse() {
        let (reg, t1, _) = registry();
        let mut db = HistoryDb::new();
        let out = run(&toy(), &request(&t1, Transparency::BlackBox), &reg, &mut db).unwrap();
        let prov = db.prov(&out.record.record_id).unwrap();
        assert_eq!(prov.activities.len(), 1);
        assert!(prov.usages.iter().all(|u| u.is_coarse()));
        assert_eq!(prov.usages.len(), 2);
        assert!(out.record.boundary_refs.is_empty());
    }

    #[test]
    fn zero_step_pipeline_passes_inputs_through() {
        let spec = PipelineSpec::new("id", &["x"], vec![], &["x"]).unwrap();
        let mut db = HistoryDb::new();
        let req = RunRequest {
            inputs: [("x".to_string(), Value::Scalar("v".into()))].into(),
            ..Default::default()
        };
        let out = run(&spec, &req, &Registry::new(), &mut db).unwrap();
        assert_eq!(out.outputs["x"], Value::Scalar("v".into()));
        assert_eq!(out.record.cost.steps_executed, 0);
    }

    #[test]
    fn unbound_slots() {
        let (reg, t1, _) = registry();
        let mut db = HistoryDb::new();
        let mut req = request(&t1, Transparency::WhiteBox);
        req.inputs.clear();
        assert!(matches!(run(&toy(), &req, &reg, &mut db), Err(PipelineError::UnboundInput(_))));
        let mut req = request(&t1, Transparency::WhiteBox);
        req.deps.clear();
        assert!(matches!(
            run(&toy(), &req, &reg, &mut db),
            Err(PipelineError::UnboundDependency(_))
        ));
        assert!(db.is_empty());
    }

    #[test]
    fn step_failure_is_attributed() {
        let failing = StepSpec::new("boom", 0, &["x"], &[], &["y"], |_| Err("no".into()));
        let spec = PipelineSpec::new("p", &["x"], vec![failing], &["y"]).unwrap();
        let req = RunRequest {
            inputs: [("x".to_string(), Value::Scalar("v".into()))].into(),
            ..Default::default()
        };
        match run(&spec, &req, &Registry::new(), &mut HistoryDb::new()) {
            Err(PipelineError::StepFailed { step, step_index, .. }) => assert_eq!((step.as_str(), step_index), ("boom", 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resume_matches_full_run() {
        let (reg, t1, t2) = registry();
        let mut db = HistoryDb::new();
        let spec = toy();
        let first = run(&spec, &request(&t1, Transparency::WhiteBox), &reg, &mut db).unwrap();
        let deps2: BTreeMap<_, _> = [("lookup".to_string(), t2.clone())].into();
        let partial = resume(&spec, &first.record, 1, &deps2, &BTreeMap::new(), &reg, &mut db).unwrap();
        let full = run(&spec, &request(&t2, Transparency::WhiteBox), &reg, &mut db).unwrap();
        assert_eq!(partial.outputs, full.outputs);
        assert_eq!(partial.outputs["found"], Value::map([("a", "10")]));
        assert_eq!(partial.record.cost.steps_executed, 1);
        assert_eq!(full.record.cost.steps_executed, 2);
        assert_eq!(partial.record.supersedes.as_deref(), Some(first.record.record_id.as_str()));
        // upstream activity carried over
        let prov = db.prov(&partial.record.record_id).unwrap();
        assert_eq!(prov.activities.len(), 2);
        assert_eq!(db.prov(&partial.record.record_id).unwrap().usages.len(), db.prov(&first.record.record_id).unwrap().usages.len());

        let same_deps: BTreeMap<_, _> = [("lookup".to_string(), t1)].into();
        let again = resume(&spec, &first.record, 0, &same_deps, &BTreeMap::new(), &reg, &mut db).unwrap();
        assert_eq!(again.outputs, first.outputs);
    }

    #[test]
    fn resume_rejects_bad_starts() {
        let (reg, t1, _) = registry();
        let mut db = HistoryDb::new();
        let spec = toy();
        let first = run(&spec, &request(&t1, Transparency::WhiteBox), &reg, &mut db).unwrap();
        let deps: BTreeMap<_, _> = [("lookup".to_string(), t1)].into();
        assert!(matches!(
            resume(&spec, &first.record, 2, &deps, &BTreeMap::new(), &reg, &mut db),
            Err(PipelineError::InvalidStart { .. })
        ));
        let over: BTreeMap<_, _> = [("words".to_string(), Value::set(["b"]))].into();
        assert!(matches!(
            resume(&spec, &first.record, 1, &deps, &over, &reg, &mut db),
            Err(PipelineError::InvalidStart { .. })
        ));
    }

    #[test]
    fn outputs_only_cache_blocks_resume() {
        let (reg, t1, t2) = registry();
        let mut db = HistoryDb::new().with_cache_mode(CacheMode::OutputsOnly);
        let spec = toy();
        let first = run(&spec, &request(&t1, Transparency::WhiteBox), &reg, &mut db).unwrap();
        let deps2: BTreeMap<_, _> = [("lookup".to_string(), t2)].into();
        let missing = missing_for_resume(&spec, &first.record, 1, &BTreeMap::new(), &db).unwrap();
        assert_eq!(missing, vec![first.record.boundary_refs["upper"].clone()]);
        match resume(&spec, &first.record, 1, &deps2, &BTreeMap::new(), &reg, &mut db) {
            Err(PipelineError::MissingCache { hashes }) => assert_eq!(hashes, missing),
            other => panic!("unexpected {other:?}"),
        }
        assert!(missing_for_resume(&spec, &first.record, 0, &BTreeMap::new(), &db).unwrap().is_empty());
    }
}
