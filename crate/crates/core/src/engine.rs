//! Re-computation decisions over the history database.
//!
//! Given a change to an input or to a dependency dataset, the engine
//! selects the past executions whose provenance shows they touched changed
//! elements (the scope), finds for each the earliest step that used a
//! changed element (the starting component), checks that the cached values
//! needed to resume there still exist, and executes the resulting plans.
//!
//! Dependency matching follows the provenance at element level:
//!
//! * a coarse dependency usage (black-box, or a step that could not report
//!   keys) matches any non-empty diff;
//! * a fine dependency usage matches when the diff intersects either the
//!   dependency keys the step reported or the keys of the same step's input
//!   usages. The second clause catches elements newly added to a dataset:
//!   no past usage can mention them, but the step would have looked them up
//!   through its inputs (a newly catalogued variant the patient carries).

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::history::{HistoryDb, HistoryError, HistoryRecord};
use crate::pipeline::{
    self, load_inputs, load_outputs, missing_for_resume, Outputs, PipelineError, PipelineSpec, RunRequest,
    Transparency,
};
use crate::prov::{Granularity, ProvDocument, Role, UsageStatement};
use crate::store::{diff_output, DiffResult, KeySet, Registry, StoreError, VersionTag};
use crate::value::{ContentHash, Value};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("record {0} is black-box: it has no step structure")]
    BlackBox(String),
    #[error("plan for {record} is not feasible; missing {missing:?}")]
    Infeasible { record: String, missing: Vec<ContentHash> },
    #[error("no provenance stored for record {0}")]
    MissingProv(String),
    #[error("dependency change on {0} does not name a target version")]
    NoTargetVersion(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    History(#[from] HistoryError),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    InputChange,
    DependencyChange,
}

#[derive(Debug, Clone)]
pub enum ChangeEvent {
    /// `slot` changed. With `from_ref`, only records that consumed exactly
    /// that value are affected; `replacement` is the new value used when
    /// re-executing.
    Input {
        slot: String,
        diff: DiffResult,
        from_ref: Option<ContentHash>,
        replacement: Option<Value>,
    },
    /// A new version of `diff.dataset_id`; `diff.to` is the target version.
    /// Records on other historical versions are re-diffed against it.
    Dependency { diff: DiffResult },
}

impl ChangeEvent {
    /// Dependency change `from → to`, diffed with the dataset's diff function.
    pub fn dependency(registry: &Registry, from: &VersionTag, to: &VersionTag) -> Result<Self> {
        Ok(ChangeEvent::Dependency {
            diff: registry.diff(from, to)?,
        })
    }

    /// Dependency change to `to` for every record, whatever version it used.
    pub fn dependency_to(to: &VersionTag) -> Self {
        let mut diff = DiffResult::empty(&to.dataset_id);
        diff.to = Some(to.clone());
        ChangeEvent::Dependency { diff }
    }

    pub fn kind(&self) -> ChangeKind {
        match self {
            ChangeEvent::Input { .. } => ChangeKind::InputChange,
            ChangeEvent::Dependency { .. } => ChangeKind::DependencyChange,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ChangeEvent::Input { slot, .. } => slot,
            ChangeEvent::Dependency { diff } => &diff.dataset_id,
        }
    }

    pub fn diff(&self) -> &DiffResult {
        match self {
            ChangeEvent::Input { diff, .. } | ChangeEvent::Dependency { diff } => diff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedUsage {
    pub usage: UsageStatement,
    pub step_index: u32,
}

/// One in-scope record with the usages that put it there.
#[derive(Debug, Clone)]
pub struct ScopeEntry {
    pub record: HistoryRecord,
    pub granularity: Granularity,
    pub matched_usages: Vec<MatchedUsage>,
    pub matched_keys: KeySet,
    /// Dataset versions to substitute when re-executing.
    pub target_versions: BTreeMap<String, VersionTag>,
    /// Input values to substitute when re-executing.
    pub input_replacements: BTreeMap<String, Value>,
}

impl ScopeEntry {
    fn merge(&mut self, other: ScopeEntry) {
        for u in other.matched_usages {
            if !self.matched_usages.contains(&u) {
                self.matched_usages.push(u);
            }
        }
        self.matched_usages.sort_by_key(|u| u.step_index);
        self.matched_keys.extend(other.matched_keys);
        self.target_versions.extend(other.target_versions);
        self.input_replacements.extend(other.input_replacements);
    }
}

fn prov_of<'a>(db: &'a HistoryDb, record: &HistoryRecord) -> Result<&'a ProvDocument> {
    db.prov(&record.record_id)
        .ok_or_else(|| EngineError::MissingProv(record.record_id.clone()))
}

fn step_of(prov: &ProvDocument, usage: &UsageStatement) -> u32 {
    prov.activity(&usage.activity_id)
        .map(|a| a.step_index)
        .expect("stored provenance is valid")
}

/// Usages in `prov` that make it sensitive to `keys` of `dataset`, and the
/// matched keys. Empty when the record is unaffected.
pub fn match_dependency(prov: &ProvDocument, dataset: &str, keys: &KeySet) -> (Vec<MatchedUsage>, KeySet) {
    let mut matched = Vec::new();
    let mut matched_keys = KeySet::new();
    for dep in prov.usages.iter().filter(|u| u.role == Role::Dep) {
        let uses_dataset = prov
            .entity(&dep.entity_id)
            .and_then(|e| e.version())
            .is_some_and(|(ds, _)| ds == dataset);
        if !uses_dataset {
            continue;
        }
        let step = step_of(prov, dep);
        let inputs: Vec<&UsageStatement> = prov
            .usages
            .iter()
            .filter(|u| u.role == Role::Input && u.activity_id == dep.activity_id)
            .collect();
        if dep.is_coarse() || inputs.iter().any(|u| u.is_coarse()) {
            matched.push(MatchedUsage {
                usage: dep.clone(),
                step_index: step,
            });
            matched_keys.extend(keys.iter().cloned());
            continue;
        }
        let mut hits = Vec::new();
        for u in std::iter::once(dep).chain(inputs.iter().copied()) {
            let own = u.element_keys.as_ref().expect("fine usage");
            let mut common = own.intersection(keys).peekable();
            if common.peek().is_some() {
                matched_keys.extend(common.cloned());
                hits.push(u);
            }
        }
        if !hits.is_empty() {
            if !std::ptr::eq(hits[0], dep) {
                hits.insert(0, dep);
            }
            matched.extend(hits.into_iter().map(|u| MatchedUsage {
                usage: u.clone(),
                step_index: step,
            }));
        }
    }
    matched.sort_by_key(|m| m.step_index);
    (matched, matched_keys)
}

/// Records whose provenance shows an input usage of `slot` touching the
/// diff. With `from_ref`, only records that consumed that exact value are
/// considered, and any input usage of the slot matches.
pub fn scope_for_input_change(db: &HistoryDb, event: &ChangeEvent) -> Result<Vec<ScopeEntry>> {
    let ChangeEvent::Input {
        slot,
        diff,
        from_ref,
        replacement,
    } = event
    else {
        return Ok(Vec::new());
    };
    if diff.is_empty() {
        return Ok(Vec::new());
    }
    let keys = diff.keys();
    let mut out = Vec::new();
    for record in db.records() {
        match (from_ref, record.input_refs.get(slot)) {
            (_, None) => continue,
            (Some(want), Some(have)) if want != have => continue,
            _ => {}
        }
        let prov = prov_of(db, record)?;
        let mut matched = Vec::new();
        let mut matched_keys = KeySet::new();
        for u in prov.usages.iter().filter(|u| u.role == Role::Input) {
            let on_slot = prov.entity(&u.entity_id).and_then(|e| e.slot()) == Some(slot.as_str());
            if !on_slot {
                continue;
            }
            let hit = match &u.element_keys {
                None => {
                    matched_keys.extend(keys.iter().cloned());
                    true
                }
                Some(own) if from_ref.is_some() => {
                    let common: KeySet = own.intersection(&keys).cloned().collect();
                    matched_keys.extend(if common.is_empty() { keys.clone() } else { common });
                    true
                }
                Some(own) => {
                    let before = matched_keys.len();
                    matched_keys.extend(own.intersection(&keys).cloned());
                    matched_keys.len() > before
                }
            };
            if hit {
                matched.push(MatchedUsage {
                    usage: u.clone(),
                    step_index: step_of(prov, u),
                });
            }
        }
        if matched.is_empty() {
            continue;
        }
        matched.sort_by_key(|m| m.step_index);
        out.push(ScopeEntry {
            record: record.clone(),
            granularity: prov.granularity,
            matched_usages: matched,
            matched_keys,
            target_versions: BTreeMap::new(),
            input_replacements: replacement
                .as_ref()
                .map(|v| [(slot.clone(), v.clone())].into())
                .unwrap_or_default(),
        });
    }
    Ok(out)
}

/// Records whose dependency usages of the changed dataset touch the diff
/// between the version they used and the target version. Diffs are
/// computed once per distinct historical version.
pub fn scope_for_dependency_change(db: &HistoryDb, registry: &Registry, event: &ChangeEvent) -> Result<Vec<ScopeEntry>> {
    let ChangeEvent::Dependency { diff: given } = event else {
        return Ok(Vec::new());
    };
    let dataset = given.dataset_id.as_str();
    let to = given
        .to
        .clone()
        .ok_or_else(|| EngineError::NoTargetVersion(dataset.into()))?;
    let mut diffs: HashMap<u32, DiffResult> = HashMap::new();
    if let Some(from) = &given.from {
        diffs.insert(from.sequence, given.clone());
    }
    let mut out = Vec::new();
    for record in db.records_using(dataset, None) {
        let from = record.dependency_tag(dataset).expect("filtered by dataset");
        if from.sequence == to.sequence {
            continue;
        }
        let diff = match diffs.entry(from.sequence) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(registry.diff(from, &to)?),
        };
        if diff.is_empty() {
            continue;
        }
        let prov = prov_of(db, record)?;
        let (matched, matched_keys) = match_dependency(prov, dataset, &diff.keys());
        if matched.is_empty() {
            continue;
        }
        out.push(ScopeEntry {
            record: record.clone(),
            granularity: prov.granularity,
            matched_usages: matched,
            matched_keys,
            target_versions: [(dataset.to_string(), to.clone())].into(),
            input_replacements: BTreeMap::new(),
        });
    }
    Ok(out)
}

/// Scope of one event of either kind.
pub fn scope(db: &HistoryDb, registry: &Registry, event: &ChangeEvent) -> Result<Vec<ScopeEntry>> {
    match event {
        ChangeEvent::Input { .. } => scope_for_input_change(db, event),
        ChangeEvent::Dependency { .. } => scope_for_dependency_change(db, registry, event),
    }
}

/// Union of the scopes of several events, one entry per record, in record
/// order.
pub fn scope_union(db: &HistoryDb, registry: &Registry, events: &[ChangeEvent]) -> Result<Vec<ScopeEntry>> {
    let mut merged: BTreeMap<u64, ScopeEntry> = BTreeMap::new();
    for event in events {
        for entry in scope(db, registry, event)? {
            match merged.get_mut(&entry.record.execution_version) {
                Some(existing) => existing.merge(entry),
                None => {
                    merged.insert(entry.record.execution_version, entry);
                }
            }
        }
    }
    Ok(merged.into_values().collect())
}

/// The earliest step among the matched usages.
pub fn find_starting_component(entry: &ScopeEntry) -> Result<u32> {
    if entry.granularity == Granularity::BlackBox {
        return Err(EngineError::BlackBox(entry.record.record_id.clone()));
    }
    Ok(entry
        .matched_usages
        .iter()
        .map(|m| m.step_index)
        .min()
        .expect("scope entries have at least one matched usage"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMode {
    Partial,
    Total,
}

impl PlanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanMode::Partial => "partial",
            PlanMode::Total => "total",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecompPlan {
    pub entry: ScopeEntry,
    pub mode: PlanMode,
    /// Present iff `mode` is partial.
    pub start_step: Option<u32>,
    pub feasible: bool,
    /// Cache hashes that are needed but missing; non-empty iff infeasible.
    pub blocking_inputs: Vec<ContentHash>,
}

impl RecompPlan {
    pub fn target_versions(&self) -> Vec<VersionTag> {
        self.entry.target_versions.values().cloned().collect()
    }

    /// A total plan for an infeasible partial plan, if the record's
    /// original inputs are still cached.
    pub fn degrade(&self, db: &HistoryDb) -> Result<Option<RecompPlan>> {
        if self.feasible || self.mode == PlanMode::Total {
            return Ok(None);
        }
        let total = total_plan(self.entry.clone(), db)?;
        Ok(total.feasible.then_some(total))
    }
}

fn total_plan(entry: ScopeEntry, db: &HistoryDb) -> Result<RecompPlan> {
    let mut missing = Vec::new();
    for (slot, hash) in &entry.record.input_refs {
        if !entry.input_replacements.contains_key(slot) && !db.cache_contains(hash)? {
            missing.push(hash.clone());
        }
    }
    Ok(RecompPlan {
        entry,
        mode: PlanMode::Total,
        start_step: None,
        feasible: missing.is_empty(),
        blocking_inputs: missing,
    })
}

/// Partial plan from the starting component for white-box records, total
/// plan for black-box ones. Feasibility is checked against the cache.
pub fn plan(entry: ScopeEntry, pipeline: &PipelineSpec, db: &HistoryDb) -> Result<RecompPlan> {
    if entry.granularity == Granularity::BlackBox {
        return total_plan(entry, db);
    }
    let start = find_starting_component(&entry)?;
    let missing = missing_for_resume(pipeline, &entry.record, start, &entry.input_replacements, db)?;
    Ok(RecompPlan {
        entry,
        mode: PlanMode::Partial,
        start_step: Some(start),
        feasible: missing.is_empty(),
        blocking_inputs: missing,
    })
}

/// Flattens pipeline outputs to element → value for output diffs. A single
/// output slot contributes its elements directly; several slots are
/// prefixed with `slot:`.
pub fn flatten_outputs(outputs: &Outputs) -> BTreeMap<String, String> {
    let single = outputs.len() == 1;
    let mut flat = BTreeMap::new();
    for (slot, value) in outputs {
        let key = |k: &str| if single { k.to_string() } else { format!("{slot}:{k}") };
        match value {
            Value::Scalar(s) => {
                flat.insert(slot.clone(), s.clone());
            }
            Value::Set(items) => flat.extend(items.iter().map(|k| (key(k), String::new()))),
            Value::Map(m) => flat.extend(m.iter().map(|(k, v)| (key(k), v.clone()))),
        }
    }
    flat
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub record: HistoryRecord,
    pub outputs: Outputs,
    /// Old outputs against new outputs.
    pub output_diff: DiffResult,
}

/// Executes a feasible plan and appends the new record; the original record
/// is left untouched.
pub fn execute_plan(
    plan: &RecompPlan,
    pipeline: &PipelineSpec,
    registry: &Registry,
    db: &mut HistoryDb,
) -> Result<Execution> {
    let original = &plan.entry.record;
    if !plan.feasible {
        return Err(EngineError::Infeasible {
            record: original.record_id.clone(),
            missing: plan.blocking_inputs.clone(),
        });
    }
    let mut deps: BTreeMap<String, VersionTag> = original
        .dependency_tags
        .iter()
        .map(|t| (t.dataset_id.clone(), t.clone()))
        .collect();
    deps.extend(plan.entry.target_versions.clone());
    let old_outputs = load_outputs(db, original)?;
    let outcome = match plan.mode {
        PlanMode::Partial => pipeline::resume(
            pipeline,
            original,
            plan.start_step.expect("partial plans have a start"),
            &deps,
            &plan.entry.input_replacements,
            registry,
            db,
        )?,
        PlanMode::Total => {
            let mut inputs = BTreeMap::new();
            for (slot, hash) in &original.input_refs {
                if plan.entry.input_replacements.contains_key(slot) {
                    continue;
                }
                let single = HistoryRecord {
                    input_refs: [(slot.clone(), hash.clone())].into(),
                    ..original.clone()
                };
                inputs.extend(load_inputs(db, &single)?);
            }
            inputs.extend(plan.entry.input_replacements.clone());
            let transparency = match plan.entry.granularity {
                Granularity::WhiteBox => Transparency::WhiteBox,
                Granularity::BlackBox => Transparency::BlackBox,
            };
            let req = RunRequest {
                inputs,
                deps,
                transparency,
                subject: original.subject.clone(),
                supersedes: Some(original.record_id.clone()),
            };
            pipeline::run(pipeline, &req, registry, db)?
        }
    };
    let output_diff = diff_output(&flatten_outputs(&old_outputs), &flatten_outputs(&outcome.outputs));
    Ok(Execution {
        record: outcome.record,
        outputs: outcome.outputs,
        output_diff,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ReactOptions {
    /// Plan only.
    pub dry_run: bool,
    /// Ignore records that a later record already re-executed.
    pub skip_superseded: bool,
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub record_id: String,
    pub subject: Option<String>,
    pub in_scope: bool,
    /// The plan as first computed; see `degraded` for what actually ran.
    pub mode: PlanMode,
    pub start_step: Option<u32>,
    pub feasible: bool,
    /// The plan was infeasible and a total re-execution from the cached
    /// original inputs was used instead.
    pub degraded: bool,
    pub executed: bool,
    pub n_output_changes: Option<usize>,
    pub matched_keys: KeySet,
    pub blocking_inputs: Vec<ContentHash>,
    pub new_record_id: Option<String>,
    pub output_diff: Option<DiffResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    pub rows: Vec<ReportRow>,
}

impl BatchReport {
    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    pub const HEADER: &'static str = "record_id\tin_scope\tmode\tstart_step\tfeasible\texecuted\tn_output_changes";

    /// Tab-separated rows: `record_id in_scope mode start_step feasible
    /// executed n_output_changes`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            out.push_str(&r.tsv_prefix());
            out.push('\n');
        }
        out
    }
}

impl ReportRow {
    pub fn tsv_prefix(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.record_id,
            self.in_scope,
            self.mode.as_str(),
            self.start_step.map_or("-".to_string(), |s| s.to_string()),
            self.feasible,
            self.executed,
            self.n_output_changes.map_or("-".to_string(), |n| n.to_string()),
        )
    }
}

/// Scopes every event, plans each in-scope record once (starting from the
/// earliest matched usage across events), degrades infeasible partial plans
/// to total ones where possible, and executes unless `dry_run`. Per-record
/// failures are reported, not propagated.
pub fn react(
    db: &mut HistoryDb,
    registry: &Registry,
    pipeline: &PipelineSpec,
    events: &[ChangeEvent],
    options: &ReactOptions,
) -> Result<BatchReport> {
    let mut entries = scope_union(db, registry, events)?;
    if options.skip_superseded {
        let superseded: std::collections::HashSet<&str> =
            db.records().iter().filter_map(|r| r.supersedes.as_deref()).collect();
        entries.retain(|e| !superseded.contains(e.record.record_id.as_str()));
    }
    let mut report = BatchReport::default();
    for entry in entries {
        let mut row = ReportRow {
            record_id: entry.record.record_id.clone(),
            subject: entry.record.subject.clone(),
            in_scope: true,
            mode: PlanMode::Total,
            start_step: None,
            feasible: false,
            degraded: false,
            executed: false,
            n_output_changes: None,
            matched_keys: entry.matched_keys.clone(),
            blocking_inputs: Vec::new(),
            new_record_id: None,
            output_diff: None,
            error: None,
        };
        let planned = match plan(entry, pipeline, db) {
            Ok(p) => p,
            Err(e) => {
                row.error = Some(e.to_string());
                report.rows.push(row);
                continue;
            }
        };
        row.blocking_inputs = planned.blocking_inputs.clone();
        row.mode = planned.mode;
        row.start_step = planned.start_step;
        row.feasible = planned.feasible;
        let effective = match planned.degrade(db) {
            Ok(Some(total)) => {
                row.degraded = true;
                total
            }
            Ok(None) => planned,
            Err(e) => {
                row.error = Some(e.to_string());
                planned
            }
        };
        if !options.dry_run && effective.feasible && row.error.is_none() {
            match execute_plan(&effective, pipeline, registry, db) {
                Ok(exec) => {
                    row.executed = true;
                    row.n_output_changes = Some(exec.output_diff.len());
                    row.new_record_id = Some(exec.record.record_id.clone());
                    row.output_diff = Some(exec.output_diff);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
        } else if !options.dry_run && !effective.feasible {
            row.error = Some(format!(
                "blocked: missing {}",
                effective
                    .blocking_inputs
                    .iter()
                    .map(ContentHash::as_str)
                    .collect::<Vec<_>>()
                    .join(",")
            ));
        }
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{key_set, CLINVAR, OMIM};
    use crate::svi::{self, Patient, Variant};

    struct World {
        reg: Registry,
        db: HistoryDb,
        om: VersionTag,
        cv14: VersionTag,
        cv15: VersionTag,
    }

    fn patient(id: &str, term: &str, vars: &[(&str, &str)]) -> Patient {
        Patient {
            id: id.into(),
            phenotype: [term.to_string()].into(),
            varset: vars.iter().map(|(v, g)| Variant::new(*v, *g)).collect(),
        }
    }

    fn cohort() -> Vec<Patient> {
        vec![
            patient("p1", "Alzheimer's", &[("227083249", "PSEN2"), ("55", "BRCA1")]),
            patient("p2", "Parkinson's", &[("161807855", "PARK2")]),
            patient("p3", "Alzheimer's", &[("77", "TP53")]),
        ]
    }

    fn world(transparency: Transparency) -> World {
        let mut reg = Registry::new();
        let om = reg
            .register_tsv(OMIM, Some("1995"), "Alzheimer's\tPSEN2,PLAU\nParkinson's\tPARK2\n")
            .unwrap();
        let cv14 = reg.register_tsv(CLINVAR, Some("2014"), "55\tBRCA1\tbenign\n").unwrap();
        let cv15 = reg
            .register_tsv(
                CLINVAR,
                Some("2015"),
                "55\tBRCA1\tbenign\n227083249\tPSEN2\tprobably pathogenic, uncertain significance\n161807855\tPARK2\tbenign\n",
            )
            .unwrap();
        let mut db = HistoryDb::new();
        let spec = svi::svi_pipeline();
        for p in cohort() {
            let req = RunRequest {
                inputs: p.inputs(),
                deps: [(OMIM.to_string(), om.clone()), (CLINVAR.to_string(), cv14.clone())].into(),
                transparency,
                subject: Some(p.id.clone()),
                supersedes: None,
            };
            pipeline::run(&spec, &req, &reg, &mut db).unwrap();
        }
        World {
            reg,
            db,
            om,
            cv14,
            cv15,
        }
    }

    fn subjects(entries: &[ScopeEntry]) -> Vec<String> {
        entries.iter().map(|e| e.record.subject.clone().unwrap()).collect()
    }

    #[test]
    fn clinvar_addition_scopes_both_patients() {
        let w = world(Transparency::WhiteBox);
        let ev = ChangeEvent::dependency(&w.reg, &w.cv14, &w.cv15).unwrap();
        let scope = scope_for_dependency_change(&w.db, &w.reg, &ev).unwrap();
        assert_eq!(subjects(&scope), vec!["p1", "p2"]);
        assert_eq!(scope[0].matched_keys, key_set(["227083249"]));
        for e in &scope {
            assert_eq!(find_starting_component(e).unwrap(), 1);
        }
    }

    #[test]
    fn empty_diff_empty_scope() {
        let w = world(Transparency::WhiteBox);
        let ev = ChangeEvent::dependency(&w.reg, &w.cv14, &w.cv14).unwrap();
        assert!(scope(&w.db, &w.reg, &ev).unwrap().is_empty());
        let input = ChangeEvent::Input {
            slot: svi::VARSET.into(),
            diff: DiffResult::empty(svi::VARSET),
            from_ref: None,
            replacement: None,
        };
        assert!(scope(&w.db, &w.reg, &input).unwrap().is_empty());
        assert!(react(&mut w.db.clone(), &w.reg, &svi::svi_pipeline(), &[], &ReactOptions::default())
            .unwrap()
            .rows
            .is_empty());
    }

    #[test]
    fn omim_change_outside_phenotypes_is_out_of_scope() {
        let mut w = world(Transparency::WhiteBox);
        let om2 = w
            .reg
            .register_tsv(OMIM, None, "Alzheimer's\tPSEN2,PLAU\nParkinson's\tPARK2\nHuntington's\tHTT\n")
            .unwrap();
        let ev = ChangeEvent::dependency(&w.reg, &w.om, &om2).unwrap();
        assert!(scope(&w.db, &w.reg, &ev).unwrap().is_empty());

        let om3 = w
            .reg
            .register_tsv(OMIM, None, "Alzheimer's\tPSEN2,PLAU,APP\nParkinson's\tPARK2\n")
            .unwrap();
        let ev = ChangeEvent::dependency(&w.reg, &w.om, &om3).unwrap();
        let s = scope(&w.db, &w.reg, &ev).unwrap();
        assert_eq!(subjects(&s), vec!["p1", "p3"]);
        assert!(s.iter().all(|e| find_starting_component(e).unwrap() == 0));
    }

    #[test]
    fn union_takes_earliest_step() {
        let mut w = world(Transparency::WhiteBox);
        let om2 = w
            .reg
            .register_tsv(OMIM, None, "Alzheimer's\tPSEN2,PLAU,APP\nParkinson's\tPARK2\n")
            .unwrap();
        let events = vec![
            ChangeEvent::dependency(&w.reg, &w.om, &om2).unwrap(),
            ChangeEvent::dependency(&w.reg, &w.cv14, &w.cv15).unwrap(),
        ];
        let entries = scope_union(&w.db, &w.reg, &events).unwrap();
        assert_eq!(subjects(&entries), vec!["p1", "p2", "p3"]);
        assert_eq!(find_starting_component(&entries[0]).unwrap(), 0);
        assert_eq!(find_starting_component(&entries[1]).unwrap(), 1);
        assert_eq!(entries[0].target_versions.len(), 2);
    }

    #[test]
    fn partial_plan_and_execution() {
        let mut w = world(Transparency::WhiteBox);
        let spec = svi::svi_pipeline();
        let ev = ChangeEvent::dependency(&w.reg, &w.cv14, &w.cv15).unwrap();
        let report = react(&mut w.db, &w.reg, &spec, &[ev], &ReactOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_eq!((row.mode, row.start_step, row.feasible, row.executed), (PlanMode::Partial, Some(1), true, true));
        }
        let p2 = &report.rows[1];
        assert_eq!(p2.output_diff.as_ref().unwrap().changed, key_set(["161807855"]));
        assert_eq!(report.rows[0].n_output_changes, Some(0));
        assert_eq!(w.db.len(), 5);
        let new = w.db.record(p2.new_record_id.as_ref().unwrap()).unwrap();
        assert_eq!(new.cost.steps_executed, 1);
        assert_eq!(new.dependency_tag(CLINVAR), Some(&w.cv15));
    }

    #[test]
    fn black_box_falls_back_to_total() {
        let mut w = world(Transparency::BlackBox);
        let spec = svi::svi_pipeline();
        let ev = ChangeEvent::dependency(&w.reg, &w.cv14, &w.cv15).unwrap();
        let entries = scope(&w.db, &w.reg, &ev).unwrap();
        assert_eq!(entries.len(), 3);
        assert!(matches!(find_starting_component(&entries[0]), Err(EngineError::BlackBox(_))));
        let p = plan(entries[0].clone(), &spec, &w.db).unwrap();
        assert_eq!((p.mode, p.feasible), (PlanMode::Total, true));
        let exec = execute_plan(&p, &spec, &w.reg, &mut w.db).unwrap();
        assert_eq!(exec.record.cost.steps_executed, 2);
    }

    #[test]
    fn infeasible_partial_degrades() {
        let mut w = world(Transparency::WhiteBox);
        w.db = HistoryDb::new().with_cache_mode(crate::history::CacheMode::OutputsOnly);
        let spec = svi::svi_pipeline();
        let p = &cohort()[1];
        let req = RunRequest {
            inputs: p.inputs(),
            deps: [(OMIM.to_string(), w.om.clone()), (CLINVAR.to_string(), w.cv14.clone())].into(),
            transparency: Transparency::WhiteBox,
            subject: Some(p.id.clone()),
            supersedes: None,
        };
        let rec = pipeline::run(&spec, &req, &w.reg, &mut w.db).unwrap().record;
        let ev = ChangeEvent::dependency(&w.reg, &w.cv14, &w.cv15).unwrap();
        let entry = scope(&w.db, &w.reg, &ev).unwrap().remove(0);
        let partial = plan(entry, &spec, &w.db).unwrap();
        assert_eq!(partial.mode, PlanMode::Partial);
        assert!(!partial.feasible);
        assert_eq!(partial.blocking_inputs, vec![rec.boundary_refs[svi::TARGETS].clone()]);
        assert!(matches!(
            execute_plan(&partial, &spec, &w.reg, &mut w.db),
            Err(EngineError::Infeasible { .. })
        ));
        let total = partial.degrade(&w.db).unwrap().unwrap();
        assert!(total.feasible && total.mode == PlanMode::Total);
        let exec = execute_plan(&total, &spec, &w.reg, &mut w.db).unwrap();
        assert_eq!(exec.output_diff.changed, key_set(["161807855"]));
    }

    #[test]
    fn input_change_scopes_only_that_patient() {
        let w = world(Transparency::WhiteBox);
        let p1 = &cohort()[0];
        let old = p1.inputs()[svi::VARSET].clone();
        let mut vars = p1.varset.clone();
        vars.push(Variant::new("999", "PLAU"));
        let new = Value::map(vars.iter().map(|v| (v.id.clone(), v.gene.clone())));
        let d = crate::store::diff_input(svi::VARSET, &old, svi::VARSET, &new).unwrap();
        let ev = ChangeEvent::Input {
            slot: svi::VARSET.into(),
            diff: d.diff.unwrap(),
            from_ref: Some(old.content_hash()),
            replacement: Some(new),
        };
        let s = scope(&w.db, &w.reg, &ev).unwrap();
        assert_eq!(subjects(&s), vec!["p1"]);
        assert_eq!(find_starting_component(&s[0]).unwrap(), 1);
        let spec = svi::svi_pipeline();
        let mut db = w.db.clone();
        let exec = execute_plan(&plan(s[0].clone(), &spec, &db).unwrap(), &spec, &w.reg, &mut db).unwrap();
        assert_eq!(exec.output_diff.added, key_set(["999"]));
    }

    #[test]
    fn flatten_single_and_multi() {
        let one: Outputs = [("y".to_string(), Value::map([("a", "1")]))].into();
        assert_eq!(flatten_outputs(&one), [("a".to_string(), "1".to_string())].into());
        let two: Outputs = [
            ("y".to_string(), Value::map([("a", "1")])),
            ("z".to_string(), Value::Scalar("s".into())),
        ]
        .into();
        let flat = flatten_outputs(&two);
        assert_eq!(flat["y:a"], "1");
        assert_eq!(flat["z"], "s");
    }
}
