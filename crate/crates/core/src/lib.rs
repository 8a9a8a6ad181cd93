//! Selective re-computation of white-box analytic pipelines.
//!
//! Every execution of a [`pipeline::PipelineSpec`] records its provenance,
//! the versions of the reference datasets it consulted, content hashes of its
//! inputs and a cost. When a dataset or an input changes, the
//! [`engine`] uses those records to work out which past executions are stale,
//! from which step each can be resumed, and whether the cached intermediate
//! values needed to do so are still available.
//!
//! The [`svi`] module wires up a small variant-interpretation pipeline
//! (phenotype to target genes, variant selection, traffic-light
//! classification) as the reference workload.

pub mod cli;
pub mod engine;
pub mod history;
pub mod pipeline;
pub mod prov;
pub mod store;
pub mod svi;
pub mod value;

pub use engine::{ChangeEvent, PlanMode, RecompPlan, ScopeEntry};
pub use history::{CacheMode, CostRecord, HistoryDb, HistoryRecord};
pub use pipeline::{PipelineSpec, StepSpec, Transparency};
pub use prov::{Granularity, ProvDocument, Role};
pub use store::{DatasetVersion, DiffResult, ElementKey, ElementValue, Registry, VersionTag};
pub use value::{ContentHash, Value};
