//! Registry of immutable, keyed dataset versions and the diff functions
//! that compare them.
//!
//! Every dataset element carries a stable string key; two versions are
//! compared key by key. `changed` always means "same key, unequal value",
//! where equality is dataset-specific: gene sets compare as sets for OMIM,
//! ClinVar entries compare by parsed clinical status.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svi::{parse_gene_list, parse_raw_status};
use crate::value::Value;

pub const OMIM: &str = "omim";
pub const CLINVAR: &str = "clinvar";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("label {label:?} already registered for dataset {dataset}")]
    DuplicateLabel { dataset: String, label: String },
    #[error("invalid dataset id {0:?}")]
    InvalidDatasetId(String),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("invalid element {key:?}: {reason}")]
    InvalidElement { key: String, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cannot diff {left} against {right}: different datasets")]
    DatasetMismatch { left: String, right: String },
    #[error("cannot diff input slot {left} against {right}")]
    SlotMismatch { left: String, right: String },
    #[error("unknown version {0}")]
    UnknownVersion(String),
    #[error("registry file {path}: {reason}")]
    Layout { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Identity of one version of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionTag {
    pub dataset_id: String,
    pub sequence: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl VersionTag {
    /// Parses the `dataset@sequence` form produced by `Display`.
    pub fn parse(s: &str) -> Option<(String, u32)> {
        let (id, seq) = s.rsplit_once('@')?;
        let seq: u32 = seq.parse().ok()?;
        (!id.is_empty() && seq > 0).then(|| (id.to_string(), seq))
    }

    /// `clinvar@2 (2015)` style description for operators.
    pub fn describe(&self) -> String {
        match &self.label {
            Some(l) => format!("{self} ({l})"),
            None => self.to_string(),
        }
    }
}

impl fmt::Display for VersionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.dataset_id, self.sequence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementKey(String);

impl ElementKey {
    pub fn new(key: impl Into<String>) -> Option<Self> {
        let key = key.into();
        (!key.is_empty()).then_some(ElementKey(key))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ElementKey {
    /// Panics on the empty string; use [`ElementKey::new`] for untrusted data.
    fn from(s: &str) -> Self {
        ElementKey::new(s).expect("element keys are non-empty")
    }
}

impl Borrow<str> for ElementKey {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type KeySet = BTreeSet<ElementKey>;

pub fn key_set<I, S>(keys: I) -> KeySet
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    keys.into_iter().filter_map(|k| ElementKey::new(k.as_ref())).collect()
}

/// The text of one element as it appears after the key in a snapshot line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementValue(pub String);

impl ElementValue {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ElementValue {
    fn from(s: &str) -> Self {
        ElementValue(s.to_string())
    }
}

/// How element values of a dataset are parsed and compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// `term<TAB>gene1,gene2,...`
    Omim,
    /// `variant_id<TAB>gene<TAB>raw_status`
    ClinVar,
    /// `key<TAB>value`
    Generic,
}

impl DatasetKind {
    pub fn for_dataset(dataset_id: &str) -> Self {
        match dataset_id {
            OMIM => DatasetKind::Omim,
            CLINVAR => DatasetKind::ClinVar,
            _ => DatasetKind::Generic,
        }
    }

    fn check_value(self, value: &str) -> std::result::Result<(), String> {
        match self {
            DatasetKind::Omim => {
                if parse_gene_list(value).is_empty() {
                    Err("empty gene list".into())
                } else {
                    Ok(())
                }
            }
            DatasetKind::ClinVar => match value.split_once('\t') {
                Some((gene, raw)) if !gene.trim().is_empty() && !raw.contains('\t') => Ok(()),
                _ => Err("expected gene<TAB>raw_status".into()),
            },
            DatasetKind::Generic => Ok(()),
        }
    }

    /// Dataset-specific value equality used by the diff functions.
    fn same_value(self, a: &ElementValue, b: &ElementValue) -> bool {
        match self {
            DatasetKind::Omim => parse_gene_list(&a.0) == parse_gene_list(&b.0),
            DatasetKind::ClinVar => clinvar_status(a) == clinvar_status(b),
            DatasetKind::Generic => a == b,
        }
    }
}

fn clinvar_status(v: &ElementValue) -> crate::svi::VariantStatus {
    let raw = v.0.split_once('\t').map(|(_, raw)| raw).unwrap_or("");
    parse_raw_status(raw)
}

/// An immutable snapshot of one dataset at one version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetVersion {
    pub tag: VersionTag,
    pub elements: BTreeMap<ElementKey, ElementValue>,
}

impl DatasetVersion {
    pub fn get(&self, key: &str) -> Option<&ElementValue> {
        self.elements.get(key)
    }

    pub fn kind(&self) -> DatasetKind {
        DatasetKind::for_dataset(&self.tag.dataset_id)
    }

    /// Snapshot text in the TSV format accepted by [`parse_snapshot`].
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {}\n", self.tag.describe());
        for (k, v) in &self.elements {
            out.push_str(k.as_str());
            out.push('\t');
            out.push_str(v.as_str());
            out.push('\n');
        }
        out
    }
}

/// Parses snapshot text. Blank lines and `#` comments are skipped; line
/// numbers in errors are 1-based.
pub fn parse_snapshot(kind: DatasetKind, text: &str) -> Result<BTreeMap<ElementKey, ElementValue>> {
    let mut elements = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| StoreError::Parse { line: line_no, reason };
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("missing tab separator".into()))?;
        let key = ElementKey::new(key.trim()).ok_or_else(|| parse_err("empty key".into()))?;
        kind.check_value(value).map_err(parse_err)?;
        if elements.insert(key.clone(), ElementValue(value.to_string())).is_some() {
            return Err(parse_err(format!("duplicate key {key}")));
        }
    }
    Ok(elements)
}

/// Added, removed and changed element keys between two versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffResult {
    pub dataset_id: String,
    pub from: Option<VersionTag>,
    pub to: Option<VersionTag>,
    pub added: KeySet,
    pub removed: KeySet,
    pub changed: KeySet,
}

impl DiffResult {
    pub fn empty(dataset_id: impl Into<String>) -> Self {
        DiffResult {
            dataset_id: dataset_id.into(),
            from: None,
            to: None,
            added: KeySet::new(),
            removed: KeySet::new(),
            changed: KeySet::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }

    /// added ∪ removed ∪ changed
    pub fn keys(&self) -> KeySet {
        self.added
            .iter()
            .chain(&self.removed)
            .chain(&self.changed)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len() + self.changed.len()
    }
}

/// Key-wise comparison of two maps under a caller-supplied value equality.
pub fn diff_maps<K, V, F>(dataset_id: &str, from: &BTreeMap<K, V>, to: &BTreeMap<K, V>, same: F) -> DiffResult
where
    K: AsRef<str> + Ord,
    F: Fn(&V, &V) -> bool,
{
    let mut diff = DiffResult::empty(dataset_id);
    for (k, old) in from {
        match to.get(k) {
            None => {
                diff.removed.insert(ElementKey::from(k.as_ref()));
            }
            Some(new) if !same(old, new) => {
                diff.changed.insert(ElementKey::from(k.as_ref()));
            }
            Some(_) => {}
        }
    }
    for k in to.keys() {
        if !from.contains_key(k) {
            diff.added.insert(ElementKey::from(k.as_ref()));
        }
    }
    diff
}

impl AsRef<str> for ElementKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn check_same_dataset(a: &DatasetVersion, b: &DatasetVersion) -> Result<()> {
    if a.tag.dataset_id != b.tag.dataset_id {
        return Err(StoreError::DatasetMismatch {
            left: a.tag.to_string(),
            right: b.tag.to_string(),
        });
    }
    Ok(())
}

fn diff_versions(a: &DatasetVersion, b: &DatasetVersion, kind: DatasetKind) -> Result<DiffResult> {
    check_same_dataset(a, b)?;
    let mut diff = diff_maps(&a.tag.dataset_id, &a.elements, &b.elements, |x, y| kind.same_value(x, y));
    diff.from = Some(a.tag.clone());
    diff.to = Some(b.tag.clone());
    Ok(diff)
}

/// Plain key/value comparison: symmetric difference of keys plus keys whose
/// values differ byte-wise.
pub fn diff_generic(a: &DatasetVersion, b: &DatasetVersion) -> Result<DiffResult> {
    diff_versions(a, b, DatasetKind::Generic)
}

/// Terms whose gene mapping changed, compared as unordered gene sets.
pub fn diff_omim(a: &DatasetVersion, b: &DatasetVersion) -> Result<DiffResult> {
    diff_versions(a, b, DatasetKind::Omim)
}

/// Variants whose clinical status changed, plus variants added or removed.
pub fn diff_clinvar(a: &DatasetVersion, b: &DatasetVersion) -> Result<DiffResult> {
    diff_versions(a, b, DatasetKind::ClinVar)
}

/// Dispatches on the dataset id: `omim`, `clinvar`, or generic.
pub fn diff_dataset(a: &DatasetVersion, b: &DatasetVersion) -> Result<DiffResult> {
    diff_versions(a, b, a.kind())
}

/// Outcome of comparing two values of one input slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputDiff {
    pub changed: bool,
    /// Present when both values are keyed collections.
    pub diff: Option<DiffResult>,
}

/// Compares two values bound to the same input slot. Scalars compare by
/// equality; sets and maps are diffed element-wise.
pub fn diff_input(slot_a: &str, x_a: &Value, slot_b: &str, x_b: &Value) -> Result<InputDiff> {
    if slot_a != slot_b {
        return Err(StoreError::SlotMismatch {
            left: slot_a.into(),
            right: slot_b.into(),
        });
    }
    let diff = match (x_a, x_b) {
        (Value::Set(a), Value::Set(b)) => {
            let a: BTreeMap<&str, ()> = a.iter().map(|k| (k.as_str(), ())).collect();
            let b: BTreeMap<&str, ()> = b.iter().map(|k| (k.as_str(), ())).collect();
            Some(diff_maps(slot_a, &a, &b, |_, _| true))
        }
        (Value::Map(a), Value::Map(b)) => Some(diff_maps(slot_a, a, b, |x, y| x == y)),
        _ => None,
    };
    let changed = match &diff {
        Some(d) => !d.is_empty(),
        None => x_a != x_b,
    };
    Ok(InputDiff { changed, diff })
}

/// Compares two classified outputs keyed by variant id.
pub fn diff_output(y_a: &BTreeMap<String, String>, y_b: &BTreeMap<String, String>) -> DiffResult {
    diff_maps("output", y_a, y_b, |x, y| x == y)
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// All registered dataset versions, optionally mirrored to a directory as
/// `<dataset_id>/<sequence>_<label>.tsv`.
#[derive(Debug, Default, Clone)]
pub struct Registry {
    datasets: BTreeMap<String, Vec<Arc<DatasetVersion>>>,
    root: Option<PathBuf>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a registry persisted under `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut datasets: BTreeMap<String, Vec<Arc<DatasetVersion>>> = BTreeMap::new();
        let mut dirs: Vec<_> = fs::read_dir(&root)?.collect::<std::io::Result<_>>()?;
        dirs.sort_by_key(|e| e.file_name());
        for dir in dirs {
            if !dir.file_type()?.is_dir() {
                continue;
            }
            let dataset_id = dir.file_name().to_string_lossy().into_owned();
            let kind = DatasetKind::for_dataset(&dataset_id);
            let mut versions = Vec::new();
            for file in fs::read_dir(dir.path())? {
                let path = file?.path();
                let layout = |reason: &str| StoreError::Layout {
                    path: path.clone(),
                    reason: reason.into(),
                };
                let name = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_suffix(".tsv"))
                    .ok_or_else(|| layout("expected <sequence>_<label>.tsv"))?;
                let (seq, label) = name.split_once('_').ok_or_else(|| layout("missing '_'"))?;
                let sequence: u32 = seq.parse().map_err(|_| layout("bad sequence"))?;
                let text = fs::read_to_string(&path)?;
                let elements = parse_snapshot(kind, &text).map_err(|e| layout(&e.to_string()))?;
                versions.push(Arc::new(DatasetVersion {
                    tag: VersionTag {
                        dataset_id: dataset_id.clone(),
                        sequence,
                        label: (!label.is_empty()).then(|| label.to_string()),
                    },
                    elements,
                }));
            }
            versions.sort_by_key(|v| v.tag.sequence);
            for (i, v) in versions.iter().enumerate() {
                if v.tag.sequence as usize != i + 1 {
                    return Err(StoreError::Layout {
                        path: dir.path(),
                        reason: format!("sequence gap before {}", v.tag),
                    });
                }
            }
            if !versions.is_empty() {
                datasets.insert(dataset_id, versions);
            }
        }
        Ok(Registry {
            datasets,
            root: Some(root),
        })
    }

    pub fn register_version(
        &mut self,
        dataset_id: &str,
        label: Option<&str>,
        elements: BTreeMap<ElementKey, ElementValue>,
    ) -> Result<VersionTag> {
        if !valid_name(dataset_id) {
            return Err(StoreError::InvalidDatasetId(dataset_id.into()));
        }
        if let Some(l) = label {
            if !valid_name(l) {
                return Err(StoreError::InvalidLabel(l.into()));
            }
        }
        let kind = DatasetKind::for_dataset(dataset_id);
        for (k, v) in &elements {
            kind.check_value(v.as_str()).map_err(|reason| StoreError::InvalidElement {
                key: k.to_string(),
                reason,
            })?;
        }
        let versions = self.datasets.entry(dataset_id.to_string()).or_default();
        if let Some(l) = label {
            if versions.iter().any(|v| v.tag.label.as_deref() == Some(l)) {
                return Err(StoreError::DuplicateLabel {
                    dataset: dataset_id.into(),
                    label: l.into(),
                });
            }
        }
        let tag = VersionTag {
            dataset_id: dataset_id.to_string(),
            sequence: versions.len() as u32 + 1,
            label: label.map(str::to_string),
        };
        let version = DatasetVersion {
            tag: tag.clone(),
            elements,
        };
        if let Some(root) = &self.root {
            let dir = root.join(dataset_id);
            fs::create_dir_all(&dir)?;
            let file = dir.join(format!("{}_{}.tsv", tag.sequence, label.unwrap_or("")));
            fs::write(file, version.to_tsv())?;
        }
        versions.push(Arc::new(version));
        Ok(tag)
    }

    /// Parses snapshot text for `dataset_id` and registers it.
    pub fn register_tsv(&mut self, dataset_id: &str, label: Option<&str>, text: &str) -> Result<VersionTag> {
        let elements = parse_snapshot(DatasetKind::for_dataset(dataset_id), text)?;
        self.register_version(dataset_id, label, elements)
    }

    pub fn get(&self, tag: &VersionTag) -> Option<Arc<DatasetVersion>> {
        let v = self.datasets.get(&tag.dataset_id)?.get(tag.sequence.checked_sub(1)? as usize)?;
        Some(Arc::clone(v))
    }

    pub fn require(&self, tag: &VersionTag) -> Result<Arc<DatasetVersion>> {
        self.get(tag).ok_or_else(|| StoreError::UnknownVersion(tag.to_string()))
    }

    pub fn versions(&self, dataset_id: &str) -> &[Arc<DatasetVersion>] {
        self.datasets.get(dataset_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn latest(&self, dataset_id: &str) -> Option<VersionTag> {
        self.versions(dataset_id).last().map(|v| v.tag.clone())
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    /// Resolves `label`, `sequence`, `dataset@label` or `dataset@sequence`
    /// within a dataset. Labels take precedence over sequence numbers.
    pub fn resolve(&self, dataset_id: &str, spec: &str) -> Result<VersionTag> {
        let versions = self.versions(dataset_id);
        let unknown = || StoreError::UnknownVersion(format!("{dataset_id}:{spec}"));
        let bare = match spec.split_once('@') {
            Some((id, rest)) if id == dataset_id => rest,
            Some(_) => return Err(unknown()),
            None => spec,
        };
        if let Some(v) = versions.iter().find(|v| v.tag.label.as_deref() == Some(bare)) {
            return Ok(v.tag.clone());
        }
        let seq = bare.parse::<u32>().map_err(|_| unknown())?;
        versions
            .iter()
            .find(|v| v.tag.sequence == seq)
            .map(|v| v.tag.clone())
            .ok_or_else(unknown)
    }

    /// Dataset-appropriate diff between two registered versions.
    pub fn diff(&self, from: &VersionTag, to: &VersionTag) -> Result<DiffResult> {
        let (a, b) = (self.require(from)?, self.require(to)?);
        diff_dataset(&a, &b)
    }
}
