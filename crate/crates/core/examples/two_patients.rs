//! The ClinVar 2014 → 2015 update over a three-patient cohort: only the two
//! patients carrying newly catalogued on-target variants are re-run, and only
//! from the classification step.

use recomp::engine::{react, ChangeEvent, ReactOptions};
use recomp::pipeline::{run, RunRequest, Transparency};
use recomp::store::{Registry, CLINVAR, OMIM};
use recomp::svi::{self, class_counts, classes_of, parse_cohort, svi_pipeline};
use recomp::HistoryDb;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = Registry::new();
    let om = registry.register_tsv(OMIM, Some("1995"), include_str!("../fixtures/om1995.tsv"))?;
    let cv14 = registry.register_tsv(CLINVAR, Some("2014"), include_str!("../fixtures/cv2014.tsv"))?;
    let cohort = parse_cohort(include_str!("../fixtures/cohort.tsv"))?;

    let spec = svi_pipeline();
    let mut db = HistoryDb::new();
    for p in &cohort {
        let req = RunRequest {
            inputs: p.inputs(),
            deps: [(OMIM.into(), om.clone()), (CLINVAR.into(), cv14.clone())].into(),
            transparency: Transparency::WhiteBox,
            subject: Some(p.id.clone()),
            supersedes: None,
        };
        let out = run(&spec, &req, &registry, &mut db)?;
        println!("{} 2014: {:?}", p.id, classes_of(&out.outputs));
    }

    let cv15 = registry.register_tsv(CLINVAR, Some("2015"), include_str!("../fixtures/cv2015.tsv"))?;
    let event = ChangeEvent::dependency(&registry, &cv14, &cv15)?;
    println!("added to ClinVar: {:?}", event.diff().added);

    let report = react(&mut db, &registry, &spec, &[event], &ReactOptions::default())?;
    for row in &report.rows {
        let new = db.record(row.new_record_id.as_deref().unwrap()).unwrap();
        let outputs = recomp::pipeline::load_outputs(&db, new)?;
        let (red, amber, green) = class_counts(&classes_of(&outputs));
        println!(
            "{} re-run from step {:?} ({}): {} output change(s); now {red} red, {amber} amber, {green} green",
            row.subject.as_deref().unwrap_or("-"),
            row.start_step,
            svi::VCLASS,
            row.n_output_changes.unwrap_or(0),
        );
    }
    Ok(())
}
