use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use recomp::engine::{scope, ChangeEvent};
use recomp::pipeline::{self, RunRequest, Transparency};
use recomp::prov::{ProvActivity, ProvEntity, ATTR_SLOT, ATTR_VERSION};
use recomp::store::{key_set, parse_snapshot, DatasetKind, Registry, CLINVAR, OMIM};
use recomp::svi::{
    classify, parse_cohort, parse_raw_status, select_variants, svi_pipeline, target_genes, write_cohort, OmimSnapshot,
    Patient, Variant,
};
use recomp::{Granularity, HistoryDb, ProvDocument, Role, Value};

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,4}"
}

fn keys() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set(word(), 0..5)
}

/// A valid white-box document: `n` steps, each using some subset of the
/// entities with optional keys.
fn white_box_doc() -> impl Strategy<Value = ProvDocument> {
    let usage = (0..4usize, any::<bool>(), prop::option::of(keys()));
    (1..4usize, prop::collection::vec((0..4usize, usage), 0..12)).prop_map(|(steps, uses)| {
        let mut doc = ProvDocument::new(Granularity::WhiteBox);
        for i in 0..4 {
            let e = if i % 2 == 0 {
                ProvEntity::new(format!("e{i}")).with_attr(ATTR_VERSION, format!("ds{i}@{}", i + 1))
            } else {
                ProvEntity::new(format!("e{i}")).with_attr(ATTR_SLOT, format!("s{i}")).collection()
            };
            doc.add_entity(e).unwrap();
        }
        for s in 0..steps {
            doc.add_activity(ProvActivity {
                id: format!("a{s}"),
                step_index: s as u32,
                started_at: s as u64,
            })
            .unwrap();
        }
        for (step, (entity, dep, ks)) in uses {
            let role = if dep { Role::Dep } else { Role::Input };
            doc.assert_usage(&format!("a{}", step % steps), &format!("e{entity}"), role, ks.map(key_set))
                .unwrap();
        }
        doc
    })
}

proptest! {
    #[test]
    fn prov_json_round_trips(doc in white_box_doc()) {
        prop_assert!(doc.validate().is_empty());
        let back = ProvDocument::from_json(&doc.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn repeated_usage_is_idempotent(doc in white_box_doc()) {
        let mut again = doc.clone();
        for u in doc.usages.clone() {
            again.assert_usage(&u.activity_id, &u.entity_id, u.role, u.element_keys.clone()).unwrap();
        }
        prop_assert_eq!(again, doc);
    }

    #[test]
    fn value_hash_ignores_construction_order(items in prop::collection::vec((word(), word()), 0..8)) {
        // Later duplicates win in a map, so dedupe first.
        let dedup: BTreeMap<String, String> = items.into_iter().collect();
        let forward = Value::map(dedup.clone());
        let backward = Value::map(dedup.into_iter().rev());
        prop_assert_eq!(forward.content_hash(), backward.content_hash());
        prop_assert_eq!(Value::from_canonical_bytes(&forward.canonical_bytes()).unwrap(), forward);
    }

    #[test]
    fn generic_snapshot_round_trips(entries in prop::collection::btree_map("[A-Za-z0-9]{1,6}", "[a-z ]{1,6}", 0..10)) {
        let text: String = entries.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
        let mut reg = Registry::new();
        let tag = reg.register_tsv("panel", None, &text).unwrap();
        let v = reg.get(&tag).unwrap();
        prop_assert_eq!(parse_snapshot(DatasetKind::Generic, &v.to_tsv()).unwrap(), v.elements.clone());
    }

    #[test]
    fn raw_status_ignores_case(i in 0..6usize, upper in any::<bool>()) {
        let texts = ["benign", "likely benign", "pathogenic", "likely pathogenic", "uncertain significance", "not provided"];
        let t = if upper { texts[i].to_uppercase() } else { texts[i].to_string() };
        prop_assert_eq!(parse_raw_status(&t), parse_raw_status(texts[i]));
    }

    #[test]
    fn selection_and_classification(
        genes in prop::collection::btree_set("G[0-9]", 0..5),
        vars in prop::collection::btree_map("[0-9]{3}", "G[0-9]", 0..12),
    ) {
        let varset: Vec<Variant> = vars.iter().map(|(id, g)| Variant::new(id, g)).collect();
        let selected = select_variants(&varset, &genes);
        prop_assert!(selected.iter().all(|v| genes.contains(&v.gene) && varset.contains(v)));
        prop_assert_eq!(selected.len(), varset.iter().filter(|v| genes.contains(&v.gene)).count());
        let reg = {
            let mut r = Registry::new();
            r.register_tsv(CLINVAR, None, "").unwrap();
            r
        };
        let cv = reg.get(&reg.latest(CLINVAR).unwrap()).unwrap();
        let classes = classify(&selected, &*cv);
        prop_assert_eq!(classes.len(), selected.len());
    }

    #[test]
    fn targets_grow_with_omim(
        mapping in prop::collection::btree_map("t[0-4]", prop::collection::btree_set("G[0-9]", 1..3), 0..5),
        extra_term in "t[0-4]",
        extra_gene in "G[0-9]",
        ph in prop::collection::btree_set("t[0-4]", 0..3),
    ) {
        let before = OmimSnapshot { mapping: mapping.clone() };
        let mut after = before.clone();
        after.mapping.entry(extra_term).or_default().insert(extra_gene);
        prop_assert!(target_genes(&ph, &before).is_subset(&target_genes(&ph, &after)));
    }

    #[test]
    fn cohort_round_trips(patients in prop::collection::btree_map(
        "p[0-9]{1,3}",
        (prop::collection::btree_set("[A-Za-z' ]{1,8}", 1..3), prop::collection::btree_map("[0-9]{1,6}", "[A-Z]{2,5}", 0..5)),
        0..6,
    )) {
        let cohort: Vec<Patient> = patients
            .into_iter()
            .map(|(id, (ph, vars))| Patient {
                id,
                phenotype: ph.into_iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect(),
                varset: vars.into_iter().map(|(v, g)| Variant::new(v, g)).collect(),
            })
            .collect();
        prop_assert_eq!(parse_cohort(&write_cohort(&cohort)).unwrap(), cohort);
    }
}

/// Scope never leaves the set of records that used the changed dataset,
/// and an unchanged target scopes nothing.
#[test]
fn scope_is_bounded_by_usage() {
    let mut reg = Registry::new();
    let om = reg.register_tsv(OMIM, None, "A\tG1\nB\tG2\n").unwrap();
    let cv1 = reg.register_tsv(CLINVAR, None, "1\tG1\tbenign\n").unwrap();
    let cv2 = reg.register_tsv(CLINVAR, None, "1\tG1\tpathogenic\n2\tG2\tbenign\n").unwrap();
    let spec = svi_pipeline();
    let mut db = HistoryDb::new();
    for (i, (term, var, gene)) in [("A", "1", "G1"), ("B", "2", "G2"), ("C", "3", "G3")].into_iter().enumerate() {
        for transparency in [Transparency::WhiteBox, Transparency::BlackBox] {
            let p = Patient {
                id: format!("p{i}"),
                phenotype: [term.to_string()].into(),
                varset: vec![Variant::new(var, gene)],
            };
            let req = RunRequest {
                inputs: p.inputs(),
                deps: [(OMIM.into(), om.clone()), (CLINVAR.into(), cv1.clone())].into(),
                transparency,
                subject: Some(p.id),
                supersedes: None,
            };
            pipeline::run(&spec, &req, &reg, &mut db).unwrap();
        }
    }
    let same = scope(&db, &reg, &ChangeEvent::dependency_to(&cv1)).unwrap();
    assert!(same.is_empty());
    let entries = scope(&db, &reg, &ChangeEvent::dependency(&reg, &cv1, &cv2).unwrap()).unwrap();
    let ids: BTreeSet<_> = entries.iter().map(|e| e.record.record_id.as_str()).collect();
    // White-box p0 and p1 are hit by 1 and 2; all black-box records are.
    assert_eq!(ids, ["h000001", "h000002", "h000003", "h000004", "h000006"].into());
}
