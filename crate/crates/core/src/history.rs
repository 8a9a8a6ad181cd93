//! Append-only history of executions plus a content-addressed cache of the
//! values that crossed step boundaries.
//!
//! On disk the store is a `history.jsonl` record log (one JSON object per
//! line), one `prov/<record_id>.prov.json` document per record and blob files
//! under `cache/<first two hash chars>/<hash>`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prov::{ProvDocument, ProvError, Role};
use crate::store::VersionTag;
use crate::value::ContentHash;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("inconsistent record {record}: {reason}")]
    Consistency { record: String, reason: String },
    #[error("record id {0} already present")]
    DuplicateRecord(String),
    #[error("history log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("provenance for {record}: {source}")]
    Prov { record: String, source: ProvError },
    #[error("cache I/O for {hash}: {source}")]
    CacheIo { hash: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HistoryError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Cache every step-boundary value.
    #[default]
    Full,
    /// Cache only the original inputs and the final outputs.
    OutputsOnly,
}

impl FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(CacheMode::Full),
            "outputs-only" => Ok(CacheMode::OutputsOnly),
            other => Err(format!("unknown cache mode {other:?} (expected full or outputs-only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub wall_time_us: u64,
    pub steps_executed: u32,
    /// Defaults to one unit per executed step.
    pub abstract_units: f64,
}

impl CostRecord {
    pub fn for_steps(steps_executed: u32, wall_time_us: u64) -> Self {
        CostRecord {
            wall_time_us,
            steps_executed,
            abstract_units: steps_executed as f64,
        }
    }
}

/// One execution: program, inputs, dependency versions, provenance, cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// Assigned on append when empty.
    pub record_id: String,
    /// Assigned on append when zero.
    pub execution_version: u64,
    pub program_id: String,
    pub program_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub input_refs: BTreeMap<String, ContentHash>,
    /// Hashes of intermediate slot values produced inside the pipeline.
    #[serde(default)]
    pub boundary_refs: BTreeMap<String, ContentHash>,
    pub dependency_tags: Vec<VersionTag>,
    pub prov_ref: String,
    pub output_ref: ContentHash,
    pub cost: CostRecord,
    /// The record this execution refreshed, for re-executions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
}

impl HistoryRecord {
    pub fn dependency_tag(&self, dataset_id: &str) -> Option<&VersionTag> {
        self.dependency_tags.iter().find(|t| t.dataset_id == dataset_id)
    }

    /// Hash of an original input or intermediate slot value.
    pub fn slot_ref(&self, slot: &str) -> Option<&ContentHash> {
        self.input_refs.get(slot).or_else(|| self.boundary_refs.get(slot))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Producer {
    pub record_id: String,
    pub step_index: u32,
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub content_hash: ContentHash,
    pub value: Arc<[u8]>,
    /// Unknown for blobs loaded back from disk.
    pub producer: Option<Producer>,
}

#[derive(Debug, Clone, Default)]
struct BlobCache {
    entries: HashMap<ContentHash, CacheEntry>,
    dir: Option<PathBuf>,
}

impl BlobCache {
    fn blob_path(dir: &Path, hash: &ContentHash) -> PathBuf {
        dir.join(&hash.as_str()[..2]).join(hash.as_str())
    }

    fn put(&mut self, value: &[u8], producer: Producer) -> Result<ContentHash> {
        let hash = ContentHash::of(value);
        if self.entries.contains_key(&hash) {
            return Ok(hash);
        }
        if let Some(dir) = &self.dir {
            let path = Self::blob_path(dir, &hash);
            if !path.exists() {
                let io = |source| HistoryError::CacheIo {
                    hash: hash.to_string(),
                    source,
                };
                fs::create_dir_all(path.parent().expect("blob path has a parent")).map_err(io)?;
                let tmp = path.with_extension(format!("tmp{}", std::process::id()));
                fs::write(&tmp, value).map_err(io)?;
                fs::rename(&tmp, &path).map_err(io)?;
            }
        }
        self.entries.insert(
            hash.clone(),
            CacheEntry {
                content_hash: hash.clone(),
                value: value.into(),
                producer: Some(producer),
            },
        );
        Ok(hash)
    }

    fn get(&self, hash: &ContentHash) -> Result<Option<Arc<[u8]>>> {
        if let Some(e) = self.entries.get(hash) {
            return Ok(Some(Arc::clone(&e.value)));
        }
        let Some(dir) = &self.dir else { return Ok(None) };
        match fs::read(Self::blob_path(dir, hash)) {
            Ok(bytes) => Ok(Some(bytes.into())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(HistoryError::CacheIo {
                hash: hash.to_string(),
                source,
            }),
        }
    }
}

/// The history database: records in append order, their provenance
/// documents, and the value cache.
#[derive(Debug, Clone, Default)]
pub struct HistoryDb {
    records: Vec<HistoryRecord>,
    index: HashMap<String, usize>,
    prov: HashMap<String, ProvDocument>,
    cache: BlobCache,
    root: Option<PathBuf>,
    cache_mode: CacheMode,
}

impl HistoryDb {
    /// An in-memory store.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cache_mode(mut self, mode: CacheMode) -> Self {
        self.cache_mode = mode;
        self
    }

    pub fn cache_mode(&self) -> CacheMode {
        self.cache_mode
    }

    pub fn set_cache_mode(&mut self, mode: CacheMode) {
        self.cache_mode = mode;
    }

    /// Opens (or creates) a store persisted under `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("prov"))?;
        fs::create_dir_all(root.join("cache"))?;
        let mut db = HistoryDb {
            cache: BlobCache {
                entries: HashMap::new(),
                dir: Some(root.join("cache")),
            },
            ..Default::default()
        };
        let log = root.join("history.jsonl");
        if log.exists() {
            let reader = BufReader::new(fs::File::open(&log)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |reason: String| HistoryError::Corrupt { line: idx + 1, reason };
                let record: HistoryRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                let text = fs::read_to_string(root.join(&record.prov_ref))?;
                let doc = ProvDocument::from_json(&text).map_err(|source| HistoryError::Prov {
                    record: record.record_id.clone(),
                    source,
                })?;
                if let Some(last) = db.records.last() {
                    if record.execution_version <= last.execution_version {
                        return Err(corrupt("execution_version not increasing".into()));
                    }
                }
                db.index.insert(record.record_id.clone(), db.records.len());
                db.prov.insert(record.record_id.clone(), doc);
                db.records.push(record);
            }
        }
        db.root = Some(root);
        Ok(db)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[HistoryRecord] {
        &self.records
    }

    pub fn record(&self, record_id: &str) -> Option<&HistoryRecord> {
        self.index.get(record_id).map(|&i| &self.records[i])
    }

    pub fn prov(&self, record_id: &str) -> Option<&ProvDocument> {
        self.prov.get(record_id)
    }

    fn next_version(&self) -> u64 {
        self.records.last().map_or(1, |r| r.execution_version + 1)
    }

    /// Id the next appended record will receive when it has none.
    pub fn next_record_id(&self) -> String {
        format!("h{:06}", self.next_version())
    }

    /// Appends `record` with its provenance after checking that every
    /// input and dependency entity of the provenance resolves to a listed
    /// hash or version tag, and that referenced hashes are cached.
    pub fn append_record(&mut self, mut record: HistoryRecord, prov: ProvDocument) -> Result<String> {
        let next = self.next_version();
        if record.execution_version == 0 {
            record.execution_version = next;
        } else if record.execution_version < next {
            return Err(HistoryError::Consistency {
                record: record.record_id,
                reason: format!("execution_version must be at least {next}"),
            });
        }
        if record.record_id.is_empty() {
            record.record_id = format!("h{:06}", record.execution_version);
        }
        if self.index.contains_key(&record.record_id) {
            return Err(HistoryError::DuplicateRecord(record.record_id));
        }
        record.prov_ref = format!("prov/{}.prov.json", record.record_id);
        self.check_consistency(&record, &prov)?;

        if let Some(root) = &self.root {
            let text = prov.to_json().map_err(|source| HistoryError::Prov {
                record: record.record_id.clone(),
                source,
            })?;
            fs::write(root.join(&record.prov_ref), text)?;
            let mut log = OpenOptions::new().create(true).append(true).open(root.join("history.jsonl"))?;
            let line = serde_json::to_string(&record).expect("record serialization is infallible");
            writeln!(log, "{line}")?;
            log.sync_data()?;
        }
        let id = record.record_id.clone();
        self.index.insert(id.clone(), self.records.len());
        self.prov.insert(id.clone(), prov);
        self.records.push(record);
        Ok(id)
    }

    fn check_consistency(&self, record: &HistoryRecord, prov: &ProvDocument) -> Result<()> {
        let fail = |reason: String| HistoryError::Consistency {
            record: record.record_id.clone(),
            reason,
        };
        if let Some(v) = prov.validate().first() {
            return Err(fail(format!("provenance: {v}")));
        }
        for usage in &prov.usages {
            let entity = prov.entity(&usage.entity_id).expect("validated");
            match usage.role {
                Role::Dep => {
                    let (dataset, seq) = entity
                        .version()
                        .ok_or_else(|| fail(format!("dependency entity {} has no version", entity.id)))?;
                    let listed = record
                        .dependency_tags
                        .iter()
                        .any(|t| t.dataset_id == dataset && t.sequence == seq);
                    if !listed {
                        return Err(fail(format!("provenance uses unlisted dependency {dataset}@{seq}")));
                    }
                }
                Role::Input => {
                    let slot = entity
                        .slot()
                        .ok_or_else(|| fail(format!("input entity {} names no slot", entity.id)))?;
                    if record.slot_ref(slot).is_none() {
                        return Err(fail(format!("provenance uses unlisted input slot {slot}")));
                    }
                }
            }
        }
        for hash in record.input_refs.values().chain(std::iter::once(&record.output_ref)) {
            if self.cache.get(hash)?.is_none() {
                return Err(fail(format!("hash {hash} is not cached")));
            }
        }
        Ok(())
    }

    /// Records whose dependency tags include `dataset_id` (at `tag`, when
    /// given), in execution order.
    pub fn records_using(&self, dataset_id: &str, tag: Option<&VersionTag>) -> Vec<&HistoryRecord> {
        self.records
            .iter()
            .filter(|r| {
                r.dependency_tags
                    .iter()
                    .any(|t| t.dataset_id == dataset_id && tag.is_none_or(|want| want.sequence == t.sequence))
            })
            .collect()
    }

    pub fn cache_put(&mut self, value: &[u8], producer: Producer) -> Result<ContentHash> {
        self.cache.put(value, producer)
    }

    pub fn cache_get(&self, hash: &ContentHash) -> Result<Option<Arc<[u8]>>> {
        self.cache.get(hash)
    }

    pub fn cache_contains(&self, hash: &ContentHash) -> Result<bool> {
        Ok(self.cache.get(hash)?.is_some())
    }

    pub fn cache_entry(&self, hash: &ContentHash) -> Option<&CacheEntry> {
        self.cache.entries.get(hash)
    }

    /// Hashes referenced by stored records that the cache cannot resolve.
    pub fn dangling_refs(&self) -> Result<Vec<(String, ContentHash)>> {
        let mut out = Vec::new();
        for r in &self.records {
            for h in r.input_refs.values().chain(std::iter::once(&r.output_ref)) {
                if self.cache.get(h)?.is_none() {
                    out.push((r.record_id.clone(), h.clone()));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prov::{Granularity, ProvActivity, ProvEntity, ATTR_SLOT, ATTR_VERSION};
    use crate::value::Value;

    fn tag(ds: &str, seq: u32) -> VersionTag {
        VersionTag {
            dataset_id: ds.into(),
            sequence: seq,
            label: None,
        }
    }

    fn sample(db: &mut HistoryDb, cv_seq: u32, varset: &Value) -> (HistoryRecord, ProvDocument) {
        let producer = Producer {
            record_id: db.next_record_id(),
            step_index: 0,
        };
        let x = db.cache_put(&varset.canonical_bytes(), producer.clone()).unwrap();
        let y = db.cache_put(&Value::map([("1", "amber")]).canonical_bytes(), producer).unwrap();
        let mut prov = ProvDocument::new(Granularity::WhiteBox);
        prov.add_entity(ProvEntity::new("cv").with_attr(ATTR_VERSION, format!("clinvar@{cv_seq}")))
            .unwrap();
        prov.add_entity(ProvEntity::new("vars").collection().with_attr(ATTR_SLOT, "varset"))
            .unwrap();
        prov.add_activity(ProvActivity {
            id: "vClass".into(),
            step_index: 0,
            started_at: 0,
        })
        .unwrap();
        prov.assert_usage("vClass", "cv", Role::Dep, None).unwrap();
        prov.assert_usage("vClass", "vars", Role::Input, None).unwrap();
        let record = HistoryRecord {
            record_id: String::new(),
            execution_version: 0,
            program_id: "svi".into(),
            program_version: "1".into(),
            subject: None,
            input_refs: [("varset".to_string(), x)].into(),
            boundary_refs: BTreeMap::new(),
            dependency_tags: vec![tag("clinvar", cv_seq)],
            prov_ref: String::new(),
            output_ref: y,
            cost: CostRecord::for_steps(1, 0),
            supersedes: None,
        };
        (record, prov)
    }

    #[test]
    fn append_and_query() {
        let mut db = HistoryDb::new();
        assert!(db.records_using("clinvar", None).is_empty());
        let (r, p) = sample(&mut db, 1, &Value::map([("1", "A")]));
        let id = db.append_record(r, p).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.record(&id).unwrap().execution_version, 1);
        let (r, p) = sample(&mut db, 1, &Value::map([("2", "B")]));
        db.append_record(r, p).unwrap();
        let (r, p) = sample(&mut db, 2, &Value::map([("3", "C")]));
        db.append_record(r, p).unwrap();
        assert_eq!(db.records_using("clinvar", None).len(), 3);
        assert_eq!(db.records_using("clinvar", Some(&tag("clinvar", 1))).len(), 2);
        assert!(db.records_using("omim", None).is_empty());
        let versions: Vec<_> = db.records().iter().map(|r| r.execution_version).collect();
        assert_eq!(versions, vec![1, 2, 3]);
    }

    #[test]
    fn unlisted_dependency_is_rejected() {
        let mut db = HistoryDb::new();
        let (mut r, p) = sample(&mut db, 1, &Value::map([("1", "A")]));
        r.dependency_tags = vec![tag("clinvar", 2)];
        match db.append_record(r, p) {
            Err(HistoryError::Consistency { reason, .. }) => assert!(reason.contains("clinvar@1")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(db.is_empty());
    }

    #[test]
    fn unlisted_input_slot_is_rejected() {
        let mut db = HistoryDb::new();
        let (mut r, p) = sample(&mut db, 1, &Value::map([("1", "A")]));
        r.input_refs.clear();
        assert!(matches!(db.append_record(r, p), Err(HistoryError::Consistency { .. })));
    }

    #[test]
    fn cache_round_trip_and_dedup() {
        let mut db = HistoryDb::new();
        let p = Producer {
            record_id: "h1".into(),
            step_index: 0,
        };
        let h1 = db.cache_put(b"hello", p.clone()).unwrap();
        let h2 = db.cache_put(b"hello", p).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(&*db.cache_get(&h1).unwrap().unwrap(), b"hello");
        assert!(db.cache_get(&ContentHash::of(b"other")).unwrap().is_none());
        assert_eq!(db.cache.entries.len(), 1);
    }

    #[test]
    fn persisted_store_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = HistoryDb::open(dir.path()).unwrap();
        let (r, p) = sample(&mut db, 1, &Value::map([("1", "A")]));
        let id = db.append_record(r, p).unwrap();
        let hash = db.record(&id).unwrap().input_refs["varset"].clone();
        let blob = dir.path().join("cache").join(&hash.as_str()[..2]).join(hash.as_str());
        assert!(blob.exists());

        let back = HistoryDb::open(dir.path()).unwrap();
        assert_eq!(back.records(), db.records());
        assert_eq!(back.prov(&id), db.prov(&id));
        assert!(back.cache_get(&hash).unwrap().is_some());
        assert!(back.dangling_refs().unwrap().is_empty());
        assert_eq!(back.next_record_id(), "h000002");
    }

    #[test]
    fn corrupt_log_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("history.jsonl"), "{not json\n").unwrap();
        assert!(matches!(HistoryDb::open(dir.path()), Err(HistoryError::Corrupt { line: 1, .. })));
    }
}
