//! Simple Variant Interpretation: the reference workload.
//!
//! A patient's phenotype terms are mapped to target genes through OMIM
//! (step `PtG`), the patient's variants on those genes are selected, and each
//! selected variant is classified red/amber/green from its ClinVar status
//! (step `vClass`). Variant selection is part of `vClass`'s input
//! preparation, so the recorded provenance has exactly two activities and
//! four usages: `PtG` uses `om` (dep) and `ph` (input), `vClass` uses `cv`
//! (dep) and `vars` (input, the selected variants).
//!
//! The module also provides synthetic OMIM/ClinVar evolutions and cohorts,
//! and the per-epoch trend report computed from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pipeline::{Outputs, PipelineSpec, ReportedUsage, StepOutput, StepSpec, UsageReport};
use crate::store::{key_set, DatasetVersion, ElementKey, ElementValue, CLINVAR, OMIM};
use crate::value::Value;

pub const PROGRAM_ID: &str = "svi";
pub const PH: &str = "ph";
pub const VARSET: &str = "varset";
pub const TARGETS: &str = "targets";
pub const CLASSES: &str = "classes";
pub const PTG: &str = "PtG";
pub const VCLASS: &str = "vClass";

#[derive(Debug, Error)]
pub enum SviError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid {name} rate {value}: rates must lie in [0, 1]")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("at least one epoch is required")]
    NoEpochs,
    #[error("the cohort is empty")]
    EmptyCohort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantStatus {
    Unknown,
    Benign,
    Pathogenic,
}

/// Maps free-text ClinVar significance to a status, case-insensitively.
/// Anything qualified as probable, likely or uncertain stays unknown.
pub fn parse_raw_status(raw: &str) -> VariantStatus {
    let s = raw.to_lowercase();
    let pathogenic = s.contains("pathogenic");
    if s.contains("benign") && !pathogenic {
        return VariantStatus::Benign;
    }
    let qualified = ["probably", "likely", "uncertain"].iter().any(|q| s.contains(q));
    if pathogenic && !qualified {
        VariantStatus::Pathogenic
    } else {
        VariantStatus::Unknown
    }
}

/// Comma-separated gene list as an unordered set.
pub fn parse_gene_list(s: &str) -> BTreeSet<String> {
    s.split(',')
        .map(str::trim)
        .filter(|g| !g.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classification {
    Red,
    Amber,
    Green,
}

impl Classification {
    pub fn from_status(status: Option<VariantStatus>) -> Self {
        match status {
            Some(VariantStatus::Pathogenic) => Classification::Red,
            Some(VariantStatus::Benign) => Classification::Green,
            Some(VariantStatus::Unknown) | None => Classification::Amber,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Red => "red",
            Classification::Amber => "amber",
            Classification::Green => "green",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Classification {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "red" => Ok(Classification::Red),
            "amber" => Ok(Classification::Amber),
            "green" => Ok(Classification::Green),
            other => Err(format!("unknown class {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub id: String,
    pub gene: String,
}

impl Variant {
    pub fn new(id: impl Into<String>, gene: impl Into<String>) -> Self {
        Variant {
            id: id.into(),
            gene: gene.into(),
        }
    }
}

/// Disease-term to gene-set lookup.
pub trait GeneMap {
    fn genes(&self, term: &str) -> Option<BTreeSet<String>>;
}

/// Variant id to clinical-status lookup.
pub trait StatusLookup {
    fn status(&self, variant_id: &str) -> Option<VariantStatus>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OmimSnapshot {
    pub mapping: BTreeMap<String, BTreeSet<String>>,
}

impl OmimSnapshot {
    pub fn from_version(v: &DatasetVersion) -> Self {
        OmimSnapshot {
            mapping: v
                .elements
                .iter()
                .map(|(k, val)| (k.to_string(), parse_gene_list(val.as_str())))
                .collect(),
        }
    }

    pub fn to_elements(&self) -> BTreeMap<ElementKey, ElementValue> {
        self.mapping
            .iter()
            .filter(|(_, genes)| !genes.is_empty())
            .map(|(term, genes)| {
                let list = genes.iter().cloned().collect::<Vec<_>>().join(",");
                (ElementKey::from(term.as_str()), ElementValue(list))
            })
            .collect()
    }
}

impl GeneMap for OmimSnapshot {
    fn genes(&self, term: &str) -> Option<BTreeSet<String>> {
        self.mapping.get(term).cloned()
    }
}

impl GeneMap for DatasetVersion {
    fn genes(&self, term: &str) -> Option<BTreeSet<String>> {
        self.get(term).map(|v| parse_gene_list(v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinVarEntry {
    pub gene: String,
    pub status: VariantStatus,
    pub raw_status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClinVarSnapshot {
    pub mapping: BTreeMap<String, ClinVarEntry>,
}

impl ClinVarSnapshot {
    pub fn from_version(v: &DatasetVersion) -> Self {
        let mapping = v
            .elements
            .iter()
            .map(|(k, val)| {
                let (gene, raw) = val.as_str().split_once('\t').unwrap_or((val.as_str(), ""));
                let entry = ClinVarEntry {
                    gene: gene.to_string(),
                    status: parse_raw_status(raw),
                    raw_status: raw.to_string(),
                };
                (k.to_string(), entry)
            })
            .collect();
        ClinVarSnapshot { mapping }
    }

    pub fn to_elements(&self) -> BTreeMap<ElementKey, ElementValue> {
        self.mapping
            .iter()
            .map(|(id, e)| {
                (
                    ElementKey::from(id.as_str()),
                    ElementValue(format!("{}\t{}", e.gene, e.raw_status)),
                )
            })
            .collect()
    }
}

impl StatusLookup for ClinVarSnapshot {
    fn status(&self, variant_id: &str) -> Option<VariantStatus> {
        self.mapping.get(variant_id).map(|e| e.status)
    }
}

impl StatusLookup for DatasetVersion {
    fn status(&self, variant_id: &str) -> Option<VariantStatus> {
        self.get(variant_id).map(|v| {
            let raw = v.as_str().split_once('\t').map_or("", |(_, r)| r);
            parse_raw_status(raw)
        })
    }
}

/// Union of the genes OMIM associates with each phenotype term. Terms
/// unknown to OMIM contribute nothing.
pub fn target_genes(ph: &BTreeSet<String>, omim: &impl GeneMap) -> BTreeSet<String> {
    ph.iter().filter_map(|t| omim.genes(t)).flatten().collect()
}

/// Variants located on one of the target genes.
pub fn select_variants<'a, I>(varset: I, targets: &BTreeSet<String>) -> Vec<Variant>
where
    I: IntoIterator<Item = &'a Variant>,
{
    varset.into_iter().filter(|v| targets.contains(&v.gene)).cloned().collect()
}

/// Traffic-light class per selected variant: pathogenic is red, benign is
/// green, unknown or uncatalogued is amber.
pub fn classify<'a, I>(selected: I, cv: &impl StatusLookup) -> BTreeMap<String, Classification>
where
    I: IntoIterator<Item = &'a Variant>,
{
    selected
        .into_iter()
        .map(|v| (v.id.clone(), Classification::from_status(cv.status(&v.id))))
        .collect()
}

fn varset_from_value(v: &Value) -> Result<Vec<Variant>, String> {
    let m = v.as_map().ok_or("varset must map variant ids to genes")?;
    Ok(m.iter().map(|(id, gene)| Variant::new(id.clone(), gene.clone())).collect())
}

/// The two-step SVI pipeline: `PtG` (step 0) then `vClass` (step 1).
pub fn svi_pipeline() -> PipelineSpec {
    let ptg = StepSpec::new(PTG, 0, &[PH], &[OMIM], &[TARGETS], |ctx| {
        let ph = ctx.input(PH)?.as_set().ok_or("ph must be a set of terms")?;
        let omim = ctx.dep(OMIM)?;
        let targets = target_genes(ph, omim);
        let mapped = ph.iter().filter(|t| omim.get(t).is_some());
        Ok(StepOutput {
            values: [(TARGETS.to_string(), Value::Set(targets))].into(),
            usage: UsageReport::Fine(vec![
                ReportedUsage::dep(OMIM, key_set(mapped)),
                ReportedUsage::input(PH, key_set(ph)),
            ]),
        })
    });
    let vclass = StepSpec::new(VCLASS, 1, &[VARSET, TARGETS], &[CLINVAR], &[CLASSES], |ctx| {
        let varset = varset_from_value(ctx.input(VARSET)?)?;
        let targets = ctx.input(TARGETS)?.as_set().ok_or("targets must be a set of genes")?;
        let cv = ctx.dep(CLINVAR)?;
        let selected = select_variants(&varset, targets);
        let classes = classify(&selected, cv);
        let catalogued = selected.iter().filter(|v| cv.get(&v.id).is_some()).map(|v| &v.id);
        Ok(StepOutput {
            values: [(
                CLASSES.to_string(),
                Value::map(classes.iter().map(|(id, c)| (id.clone(), c.as_str()))),
            )]
            .into(),
            usage: UsageReport::Fine(vec![
                ReportedUsage::dep(CLINVAR, key_set(catalogued)),
                ReportedUsage::input(VARSET, key_set(selected.iter().map(|v| &v.id))).via("vars"),
            ]),
        })
    });
    PipelineSpec::new(PROGRAM_ID, &[VARSET, PH], vec![ptg, vclass], &[CLASSES])
        .expect("SVI pipeline is well formed")
        .name_entity(OMIM, "om", Some("OMIM"))
        .name_entity(CLINVAR, "cv", Some("CV"))
        .name_entity("vars", "vars", None)
        .name_entity(CLASSES, "y", None)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patient {
    pub id: String,
    pub phenotype: BTreeSet<String>,
    pub varset: Vec<Variant>,
}

impl Patient {
    /// Pipeline inputs: `ph` as a term set and `varset` as id → gene.
    pub fn inputs(&self) -> BTreeMap<String, Value> {
        [
            (PH.to_string(), Value::Set(self.phenotype.clone())),
            (
                VARSET.to_string(),
                Value::map(self.varset.iter().map(|v| (v.id.clone(), v.gene.clone()))),
            ),
        ]
        .into()
    }
}

/// Class per variant id from SVI pipeline outputs.
pub fn classes_of(outputs: &Outputs) -> BTreeMap<String, String> {
    outputs
        .get(CLASSES)
        .and_then(Value::as_map)
        .cloned()
        .unwrap_or_default()
}

/// (red, amber, green) counts.
pub fn class_counts(classes: &BTreeMap<String, String>) -> (usize, usize, usize) {
    let count = |c: Classification| classes.values().filter(|v| **v == c.as_str()).count();
    (
        count(Classification::Red),
        count(Classification::Amber),
        count(Classification::Green),
    )
}

/// Parses `patient_id<TAB>term1;term2<TAB>variantid1:gene1,variantid2:gene2`.
pub fn parse_cohort(text: &str) -> Result<Vec<Patient>, SviError> {
    let mut out: Vec<Patient> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| SviError::Parse { line: line_no, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(err("empty patient id".into()));
        }
        if out.iter().any(|p| p.id == id) {
            return Err(err(format!("duplicate patient {id}")));
        }
        let phenotype = fields[1]
            .split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        let mut varset = Vec::new();
        let mut seen = BTreeSet::new();
        for item in fields[2].split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (vid, gene) = item
                .split_once(':')
                .ok_or_else(|| err(format!("variant {item:?} is not id:gene")))?;
            let (vid, gene) = (vid.trim(), gene.trim());
            if vid.is_empty() || gene.is_empty() {
                return Err(err(format!("variant {item:?} has an empty id or gene")));
            }
            if !seen.insert(vid.to_string()) {
                return Err(err(format!("variant {vid} listed twice")));
            }
            varset.push(Variant::new(vid, gene));
        }
        out.push(Patient {
            id: id.to_string(),
            phenotype,
            varset,
        });
    }
    Ok(out)
}

pub fn write_cohort(cohort: &[Patient]) -> String {
    let mut out = String::new();
    for p in cohort {
        let terms = p.phenotype.iter().cloned().collect::<Vec<_>>().join(";");
        let vars = p
            .varset
            .iter()
            .map(|v| format!("{}:{}", v.id, v.gene))
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!("{}\t{}\t{}\n", p.id, terms, vars));
    }
    out
}

/// Per-epoch probabilities driving a synthetic OMIM/ClinVar evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthRates {
    /// An unmapped term gains its first gene.
    pub term: f64,
    /// A mapped term gains its next gene.
    pub gene: f64,
    /// An uncatalogued variant enters ClinVar (with unknown status).
    pub variant: f64,
    /// A catalogued variant of unknown status is resolved.
    pub flip: f64,
    /// A gene mapping or catalogued variant is withdrawn, or a status is
    /// revised arbitrarily. Zero keeps the evolution additive-only.
    pub removal: f64,
}

impl Default for GrowthRates {
    fn default() -> Self {
        GrowthRates {
            term: 0.2,
            gene: 0.3,
            variant: 0.2,
            flip: 0.25,
            removal: 0.0,
        }
    }
}

impl GrowthRates {
    pub fn zero() -> Self {
        GrowthRates {
            term: 0.0,
            gene: 0.0,
            variant: 0.0,
            flip: 0.0,
            removal: 0.0,
        }
    }

    fn check(&self) -> Result<(), SviError> {
        for (name, value) in [
            ("term", self.term),
            ("gene", self.gene),
            ("variant", self.variant),
            ("flip", self.flip),
            ("removal", self.removal),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SviError::InvalidRate { name, value });
            }
        }
        Ok(())
    }
}

/// Terms, genes and variants a synthetic evolution draws from, plus the
/// "true" gene sets and statuses that get revealed over time.
#[derive(Debug, Clone)]
pub struct Universe {
    pub terms: Vec<String>,
    pub genes: Vec<String>,
    pub variants: Vec<Variant>,
    latent_genes: BTreeMap<String, Vec<String>>,
    latent_status: BTreeMap<String, VariantStatus>,
}

fn latent_status(rng: &mut ChaCha8Rng) -> VariantStatus {
    match rng.gen_range(0..10) {
        0..=2 => VariantStatus::Pathogenic,
        3..=6 => VariantStatus::Benign,
        _ => VariantStatus::Unknown,
    }
}

fn raw_text(status: VariantStatus, rng: &mut ChaCha8Rng) -> String {
    let options: &[&str] = match status {
        VariantStatus::Unknown => &[
            "uncertain significance",
            "probably pathogenic, uncertain significance",
            "not provided",
        ],
        VariantStatus::Benign => &["benign", "likely benign"],
        VariantStatus::Pathogenic => &["pathogenic"],
    };
    options.choose(rng).expect("non-empty").to_string()
}

impl Universe {
    pub fn synthetic(seed: u64, n_terms: usize, n_genes: usize, n_variants: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = (0..n_terms).map(|i| format!("disorder-{i:03}")).collect();
        let genes = (0..n_genes).map(|i| format!("GENE{i:03}")).collect();
        Self::build(&mut rng, terms, genes, Vec::new(), n_variants)
    }

    /// A universe containing every term, gene and variant of `cohort`, with
    /// `extra` synthetic genes and variants added around them.
    pub fn from_cohort(seed: u64, cohort: &[Patient], extra: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms: BTreeSet<String> = cohort.iter().flat_map(|p| p.phenotype.iter().cloned()).collect();
        let mut genes: BTreeSet<String> = cohort.iter().flat_map(|p| p.varset.iter().map(|v| v.gene.clone())).collect();
        genes.extend((0..extra).map(|i| format!("GENE{i:03}")));
        let mut variants: BTreeMap<String, Variant> = BTreeMap::new();
        for v in cohort.iter().flat_map(|p| &p.varset) {
            variants.entry(v.id.clone()).or_insert_with(|| v.clone());
        }
        Self::build(
            &mut rng,
            terms.into_iter().collect(),
            genes.into_iter().collect(),
            variants.into_values().collect(),
            extra,
        )
    }

    fn build(
        rng: &mut ChaCha8Rng,
        terms: Vec<String>,
        genes: Vec<String>,
        mut variants: Vec<Variant>,
        extra_variants: usize,
    ) -> Self {
        let mut latent_genes = BTreeMap::new();
        for t in &terms {
            let k = rng.gen_range(2..=6).min(genes.len());
            let picked: Vec<String> = genes.choose_multiple(rng, k).cloned().collect();
            latent_genes.insert(t.clone(), picked);
        }
        let mut used: BTreeSet<String> = variants.iter().map(|v| v.id.clone()).collect();
        let target = variants.len() + if genes.is_empty() { 0 } else { extra_variants };
        while variants.len() < target {
            let id = rng.gen_range(1_000_000u32..250_000_000).to_string();
            if used.insert(id.clone()) {
                let gene = genes.choose(rng).expect("non-empty").clone();
                variants.push(Variant::new(id, gene));
            }
        }
        let latent_status = variants.iter().map(|v| (v.id.clone(), latent_status(rng))).collect();
        Universe {
            terms,
            genes,
            variants,
            latent_genes,
            latent_status,
        }
    }
}

/// One epoch of the synthetic reference data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Epoch {
    pub omim: OmimSnapshot,
    pub clinvar: ClinVarSnapshot,
}

/// Generates `epochs` successive OMIM/ClinVar snapshots, deterministically
/// under `seed`. With `removal == 0` the evolution only adds terms, genes
/// and variants (statuses may still be resolved).
pub fn synth_evolution(seed: u64, epochs: usize, rates: &GrowthRates, universe: &Universe) -> Result<Vec<Epoch>, SviError> {
    rates.check()?;
    if epochs == 0 {
        return Err(SviError::NoEpochs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omim = OmimSnapshot::default();
    for t in &universe.terms {
        if rng.gen_bool(0.5) {
            let first = universe.latent_genes[t].first().cloned();
            if let Some(g) = first {
                omim.mapping.insert(t.clone(), [g].into());
            }
        }
    }
    let mut clinvar = ClinVarSnapshot::default();
    for v in &universe.variants {
        if rng.gen_bool(0.3) {
            let status = if rng.gen_bool(0.5) {
                universe.latent_status[&v.id]
            } else {
                VariantStatus::Unknown
            };
            let raw_status = raw_text(status, &mut rng);
            clinvar.mapping.insert(
                v.id.clone(),
                ClinVarEntry {
                    gene: v.gene.clone(),
                    status,
                    raw_status,
                },
            );
        }
    }
    let mut out = vec![Epoch {
        omim: omim.clone(),
        clinvar: clinvar.clone(),
    }];
    for _ in 1..epochs {
        for t in &universe.terms {
            let latent = &universe.latent_genes[t];
            match omim.mapping.get_mut(t) {
                Some(genes) => {
                    if rng.gen_bool(rates.gene) {
                        if let Some(next) = latent.iter().find(|g| !genes.contains(*g)) {
                            genes.insert(next.clone());
                        }
                    }
                    if rates.removal > 0.0 && rng.gen_bool(rates.removal) {
                        let victim = genes.iter().nth(rng.gen_range(0..genes.len())).cloned();
                        if let Some(g) = victim {
                            genes.remove(&g);
                        }
                        if genes.is_empty() {
                            omim.mapping.remove(t);
                        }
                    }
                }
                None => {
                    if rng.gen_bool(rates.term) {
                        if let Some(first) = latent.first() {
                            omim.mapping.insert(t.clone(), [first.clone()].into());
                        }
                    }
                }
            }
        }
        for v in &universe.variants {
            match clinvar.mapping.get_mut(&v.id) {
                None => {
                    if rng.gen_bool(rates.variant) {
                        let raw_status = raw_text(VariantStatus::Unknown, &mut rng);
                        clinvar.mapping.insert(
                            v.id.clone(),
                            ClinVarEntry {
                                gene: v.gene.clone(),
                                status: VariantStatus::Unknown,
                                raw_status,
                            },
                        );
                    }
                }
                Some(entry) => {
                    if entry.status == VariantStatus::Unknown && rng.gen_bool(rates.flip) {
                        entry.status = universe.latent_status[&v.id];
                        entry.raw_status = raw_text(entry.status, &mut rng);
                    }
                    if rates.removal > 0.0 && rng.gen_bool(rates.removal) {
                        if rng.gen_bool(0.5) {
                            clinvar.mapping.remove(&v.id);
                        } else {
                            let status = latent_status(&mut rng);
                            entry.status = status;
                            entry.raw_status = raw_text(status, &mut rng);
                        }
                    }
                }
            }
        }
        out.push(Epoch {
            omim: omim.clone(),
            clinvar: clinvar.clone(),
        });
    }
    Ok(out)
}

/// `n` synthetic patients drawing 1–2 terms and 3–8 variants each from the
/// universe.
pub fn synth_cohort(seed: u64, n: usize, universe: &Universe) -> Vec<Patient> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let n_terms = rng.gen_range(1..=2).min(universe.terms.len());
            let phenotype = universe.terms.choose_multiple(&mut rng, n_terms).cloned().collect();
            let n_vars = rng.gen_range(3..=8).min(universe.variants.len());
            let mut varset: Vec<Variant> = universe.variants.choose_multiple(&mut rng, n_vars).cloned().collect();
            varset.sort();
            Patient {
                id: format!("p{i:03}"),
                phenotype,
                varset,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrendRow {
    pub epoch: usize,
    pub relevant_gene_count: usize,
    pub relevant_variant_count: usize,
    pub n_conclusive: usize,
}

/// Per epoch: distinct target genes and distinct selected variants over
/// the cohort, and the number of patients with at least one red variant.
pub fn trend_report(cohort: &[Patient], evolution: &[Epoch]) -> Result<Vec<TrendRow>, SviError> {
    if cohort.is_empty() {
        return Err(SviError::EmptyCohort);
    }
    Ok(evolution
        .iter()
        .enumerate()
        .map(|(epoch, e)| {
            let mut genes = BTreeSet::new();
            let mut variants = BTreeSet::new();
            let mut conclusive = 0;
            for p in cohort {
                let targets = target_genes(&p.phenotype, &e.omim);
                let selected = select_variants(&p.varset, &targets);
                let classes = classify(&selected, &e.clinvar);
                if classes.values().any(|c| *c == Classification::Red) {
                    conclusive += 1;
                }
                variants.extend(selected.into_iter().map(|v| v.id));
                genes.extend(targets);
            }
            TrendRow {
                epoch,
                relevant_gene_count: genes.len(),
                relevant_variant_count: variants.len(),
                n_conclusive: conclusive,
            }
        })
        .collect())
}

pub fn trend_tsv(rows: &[TrendRow]) -> String {
    let mut out = String::from("epoch\trelevant_genes\trelevant_variants\tn_conclusive\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.epoch, r.relevant_gene_count, r.relevant_variant_count, r.n_conclusive
        ));
    }
    out
}
