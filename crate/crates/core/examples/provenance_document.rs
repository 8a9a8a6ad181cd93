//! Builds a white-box provenance document by hand, validates it, queries it
//! and round-trips it through JSON.

use recomp::prov::{ProvActivity, ProvEntity, ATTR_SLOT, ATTR_VERSION, UsageFilter};
use recomp::store::key_set;
use recomp::{Granularity, ProvDocument, Role};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut doc = ProvDocument::new(Granularity::WhiteBox);
    doc.add_entity(ProvEntity::new("om").with_attr(ATTR_VERSION, "omim@1"))?;
    doc.add_entity(ProvEntity::new("cv").with_attr(ATTR_VERSION, "clinvar@1"))?;
    doc.add_entity(ProvEntity::new("ph").with_attr(ATTR_SLOT, "ph").collection())?;
    doc.add_entity(ProvEntity::new("vars").with_attr(ATTR_SLOT, "varset").collection())?;
    doc.add_activity(ProvActivity { id: "PtG".into(), step_index: 0, started_at: 0 })?;
    doc.add_activity(ProvActivity { id: "vClass".into(), step_index: 1, started_at: 1 })?;
    doc.assert_usage("PtG", "om", Role::Dep, Some(key_set(["Alzheimer's"])))?;
    doc.assert_usage("PtG", "ph", Role::Input, Some(key_set(["Alzheimer's"])))?;
    doc.assert_usage("vClass", "cv", Role::Dep, Some(Default::default()))?;
    doc.assert_usage("vClass", "vars", Role::Input, Some(key_set(["227083249"])))?;
    assert!(doc.validate().is_empty());

    let filter = UsageFilter {
        role: Some(Role::Input),
        element_keys_intersecting: Some(key_set(["227083249"])),
        ..Default::default()
    };
    for (usage, activity) in doc.query_usages(&filter) {
        println!("{} used {} at step {}", activity.id, usage.entity_id, activity.step_index);
    }

    let json = doc.to_json()?;
    println!("{json}");
    assert_eq!(ProvDocument::from_json(&json)?, doc);
    Ok(())
}
