//! One batch reacting to an OMIM update, a ClinVar update and a change to one
//! patient's variant list. Each affected record appears once and resumes from
//! the earliest step any of the events touched.

use recomp::engine::{react, ChangeEvent, ReactOptions};
use recomp::pipeline::{run, RunRequest, Transparency};
use recomp::store::{diff_input, Registry, CLINVAR, OMIM};
use recomp::svi::{parse_cohort, svi_pipeline, Variant, VARSET};
use recomp::HistoryDb;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = Registry::new();
    let om1 = registry.register_tsv(OMIM, Some("1995"), include_str!("../fixtures/om1995.tsv"))?;
    let cv14 = registry.register_tsv(CLINVAR, Some("2014"), include_str!("../fixtures/cv2014.tsv"))?;
    let mut cohort = parse_cohort(include_str!("../fixtures/cohort.tsv"))?;

    let spec = svi_pipeline();
    let mut db = HistoryDb::new();
    for p in &cohort {
        let req = RunRequest {
            inputs: p.inputs(),
            deps: [(OMIM.into(), om1.clone()), (CLINVAR.into(), cv14.clone())].into(),
            transparency: Transparency::WhiteBox,
            subject: Some(p.id.clone()),
            supersedes: None,
        };
        run(&spec, &req, &registry, &mut db)?;
    }

    // Migraine gains its first gene, which puts p3's TP53 variant on target.
    let om2_text = format!("{}Migraine\tTP53\n", include_str!("../fixtures/om1995.tsv"));
    let om2 = registry.register_tsv(OMIM, Some("1996"), &om2_text)?;
    let cv15 = registry.register_tsv(CLINVAR, Some("2015"), include_str!("../fixtures/cv2015.tsv"))?;

    // p2 is re-sequenced and a second variant is found.
    let p2 = &mut cohort[1];
    let old = p2.inputs()[VARSET].clone();
    p2.varset.push(Variant::new("100001", "CFTR"));
    let new = p2.inputs()[VARSET].clone();
    let input_diff = diff_input(VARSET, &old, VARSET, &new)?.diff.unwrap();

    let events = vec![
        ChangeEvent::dependency(&registry, &om1, &om2)?,
        ChangeEvent::dependency(&registry, &cv14, &cv15)?,
        ChangeEvent::Input {
            slot: VARSET.into(),
            diff: input_diff,
            from_ref: Some(old.content_hash()),
            replacement: Some(new),
        },
    ];
    let report = react(&mut db, &registry, &spec, &events, &ReactOptions::default())?;
    print!("{}", report.to_tsv());
    Ok(())
}
