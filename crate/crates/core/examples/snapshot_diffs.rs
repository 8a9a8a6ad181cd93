//! The three diff families over registered snapshots, plus input and output
//! diffs.

use std::collections::BTreeMap;

use recomp::store::{diff_input, diff_output, Registry, CLINVAR, OMIM};
use recomp::Value;

fn show(d: &recomp::DiffResult) {
    println!(
        "{}: added {:?}, removed {:?}, changed {:?}",
        d.dataset_id, d.added, d.removed, d.changed
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut reg = Registry::new();

    // Gene lists compare as sets: reordering is not a change.
    let om1 = reg.register_tsv(OMIM, Some("1995"), "Alzheimer's\tPSEN2,PLAU\nParkinson's\tPARK2\n")?;
    let om2 = reg.register_tsv(OMIM, Some("1996"), "Alzheimer's\tPLAU,PSEN2,APP\nParkinson's\tPARK2\n")?;
    show(&reg.diff(&om1, &om2)?);

    // ClinVar entries compare by parsed status, not by the free text.
    let cv1 = reg.register_tsv(CLINVAR, Some("2014"), include_str!("../fixtures/cv2014.tsv"))?;
    let cv2 = reg.register_tsv(CLINVAR, Some("2015"), include_str!("../fixtures/cv2015.tsv"))?;
    show(&reg.diff(&cv1, &cv2)?);
    let cv3 = reg.register_tsv(
        CLINVAR,
        Some("2015b"),
        &include_str!("../fixtures/cv2015.tsv").replace("\tbenign\n", "\tBenign\n"),
    )?;
    show(&reg.diff(&cv2, &cv3)?);

    // Anything else is compared element by element.
    let g1 = reg.register_tsv("panel", Some("a"), "BRCA1\thigh\nTP53\thigh\n")?;
    let g2 = reg.register_tsv("panel", Some("b"), "BRCA1\tmedium\nCFTR\thigh\n")?;
    show(&reg.diff(&g1, &g2)?);

    let before = Value::map([("227083249", "PSEN2")]);
    let after = Value::map([("227083249", "PSEN2"), ("999", "APP")]);
    let input = diff_input("varset", &before, "varset", &after)?;
    println!("input changed: {}", input.changed);
    show(input.diff.as_ref().unwrap());

    let y_a: BTreeMap<String, String> = [("161807855".into(), "amber".into())].into();
    let y_b: BTreeMap<String, String> = [("161807855".into(), "green".into())].into();
    show(&diff_output(&y_a, &y_b));
    Ok(())
}
