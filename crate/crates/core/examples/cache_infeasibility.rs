//! With only inputs and final outputs cached, a partial plan cannot find the
//! intermediate value it would resume from. The plan names the missing hash
//! and degrades to a total re-execution from the cached original inputs.

use recomp::engine::{execute_plan, plan, scope, ChangeEvent};
use recomp::pipeline::{run, RunRequest, Transparency};
use recomp::store::{Registry, CLINVAR, OMIM};
use recomp::svi::{parse_cohort, svi_pipeline};
use recomp::{CacheMode, HistoryDb};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = Registry::new();
    let om = registry.register_tsv(OMIM, Some("1995"), include_str!("../fixtures/om1995.tsv"))?;
    let cv14 = registry.register_tsv(CLINVAR, Some("2014"), include_str!("../fixtures/cv2014.tsv"))?;
    let cv15 = registry.register_tsv(CLINVAR, Some("2015"), include_str!("../fixtures/cv2015.tsv"))?;
    let patient = parse_cohort(include_str!("../fixtures/cohort.tsv"))?.remove(1);

    let spec = svi_pipeline();
    let mut db = HistoryDb::new().with_cache_mode(CacheMode::OutputsOnly);
    let req = RunRequest {
        inputs: patient.inputs(),
        deps: [(OMIM.into(), om), (CLINVAR.into(), cv14.clone())].into(),
        transparency: Transparency::WhiteBox,
        subject: Some(patient.id.clone()),
        supersedes: None,
    };
    run(&spec, &req, &registry, &mut db)?;

    let event = ChangeEvent::dependency(&registry, &cv14, &cv15)?;
    let entry = scope(&db, &registry, &event)?.remove(0);
    let partial = plan(entry, &spec, &db)?;
    println!(
        "partial from {:?}: feasible={}, blocked on {:?}",
        partial.start_step, partial.feasible, partial.blocking_inputs
    );
    let total = partial.degrade(&db)?.expect("original inputs are cached");
    let exec = execute_plan(&total, &spec, &registry, &mut db)?;
    println!(
        "fell back to {:?}: {} steps, changed {:?}",
        total.mode, exec.record.cost.steps_executed, exec.output_diff.changed
    );
    Ok(())
}
