//! Black-box executions record a single coarse activity, so any non-empty
//! ClinVar diff puts every record that used ClinVar in scope, and each plan
//! is a total re-execution.

use recomp::engine::{find_starting_component, plan, scope, ChangeEvent};
use recomp::pipeline::{run, RunRequest, Transparency};
use recomp::store::{Registry, CLINVAR, OMIM};
use recomp::svi::{parse_cohort, svi_pipeline};
use recomp::HistoryDb;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = Registry::new();
    let om = registry.register_tsv(OMIM, Some("1995"), include_str!("../fixtures/om1995.tsv"))?;
    let cv14 = registry.register_tsv(CLINVAR, Some("2014"), include_str!("../fixtures/cv2014.tsv"))?;
    let cv15 = registry.register_tsv(CLINVAR, Some("2015"), include_str!("../fixtures/cv2015.tsv"))?;

    let spec = svi_pipeline();
    let mut db = HistoryDb::new();
    for p in parse_cohort(include_str!("../fixtures/cohort.tsv"))? {
        let req = RunRequest {
            inputs: p.inputs(),
            deps: [(OMIM.into(), om.clone()), (CLINVAR.into(), cv14.clone())].into(),
            transparency: Transparency::BlackBox,
            subject: Some(p.id.clone()),
            supersedes: None,
        };
        let out = run(&spec, &req, &registry, &mut db)?;
        let prov = db.prov(&out.record.record_id).unwrap();
        println!("{}: {} activity, {} coarse usages", p.id, prov.activities.len(), prov.usages.len());
    }

    let event = ChangeEvent::dependency(&registry, &cv14, &cv15)?;
    for entry in scope(&db, &registry, &event)? {
        let subject = entry.record.subject.clone().unwrap_or_default();
        let start = find_starting_component(&entry);
        let p = plan(entry, &spec, &db)?;
        println!("{subject}: in scope, start {:?}, plan {:?}, feasible={}", start.map_err(|e| e.to_string()), p.mode, p.feasible);
    }
    Ok(())
}
