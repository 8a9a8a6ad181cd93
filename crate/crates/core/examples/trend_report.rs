//! Counts of relevant genes, relevant variants and conclusive patients over
//! a synthetic, additive-only OMIM/ClinVar evolution.

use recomp::svi::{synth_cohort, synth_evolution, trend_report, trend_tsv, GrowthRates, Universe};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let universe = Universe::synthetic(seed, 20, 60, 200);
    let cohort = synth_cohort(seed, 50, &universe);
    let evolution = synth_evolution(seed, 8, &GrowthRates::default(), &universe)?;
    print!("{}", trend_tsv(&trend_report(&cohort, &evolution)?));
    Ok(())
}
