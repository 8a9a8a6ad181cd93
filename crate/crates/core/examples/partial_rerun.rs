//! Finds the starting component for a ClinVar change, checks the plan is
//! feasible and shows that resuming from it matches a full re-execution
//! while running fewer steps.

use recomp::engine::{execute_plan, find_starting_component, plan, scope, ChangeEvent};
use recomp::pipeline::{run, RunRequest, Transparency};
use recomp::store::{Registry, CLINVAR, OMIM};
use recomp::svi::{parse_cohort, svi_pipeline};
use recomp::HistoryDb;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = Registry::new();
    let om = registry.register_tsv(OMIM, Some("1995"), include_str!("../fixtures/om1995.tsv"))?;
    let cv14 = registry.register_tsv(CLINVAR, Some("2014"), include_str!("../fixtures/cv2014.tsv"))?;
    let cv15 = registry.register_tsv(CLINVAR, Some("2015"), include_str!("../fixtures/cv2015.tsv"))?;
    let patient = parse_cohort(include_str!("../fixtures/cohort.tsv"))?.remove(1);

    let spec = svi_pipeline();
    let mut db = HistoryDb::new();
    let mut req = RunRequest {
        inputs: patient.inputs(),
        deps: [(OMIM.into(), om.clone()), (CLINVAR.into(), cv14.clone())].into(),
        transparency: Transparency::WhiteBox,
        subject: Some(patient.id.clone()),
        supersedes: None,
    };
    run(&spec, &req, &registry, &mut db)?;

    let event = ChangeEvent::dependency(&registry, &cv14, &cv15)?;
    let entry = scope(&db, &registry, &event)?.remove(0);
    let start = find_starting_component(&entry)?;
    println!("{} starts at step {start} ({})", entry.record.record_id, spec.steps[start as usize].name);
    for m in &entry.matched_usages {
        println!("  matched {} {} keys {:?}", m.usage.role, m.usage.entity_id, m.usage.element_keys);
    }

    let p = plan(entry, &spec, &db)?;
    println!("plan: {:?} from {:?}, feasible={}", p.mode, p.start_step, p.feasible);
    let partial = execute_plan(&p, &spec, &registry, &mut db)?;

    req.deps.insert(CLINVAR.into(), cv15);
    let total = run(&spec, &req, &registry, &mut db)?;
    assert_eq!(partial.outputs, total.outputs);
    println!(
        "partial ran {} step(s), total ran {}; outputs identical; output diff {:?}",
        partial.record.cost.steps_executed, total.record.cost.steps_executed, partial.output_diff.changed
    );
    Ok(())
}
