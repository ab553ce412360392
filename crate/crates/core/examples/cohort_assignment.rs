//! Assign persons to event-year cohorts and report why others drop out.
//!
//! cargo run --example cohort_assignment

use stagdid::panel::{assign_cohorts, FilterSpec, SizeCategory};
use stagdid::synth::{simulate_panel, DgpConfig};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2017).map(|g| (g, 20)).collect(),
        never_treated: 200,
        // deaths one year after the transfer
        death_offset: 1,
        ..DgpConfig::default()
    })?;

    let filter = FilterSpec::default();
    let cohorts = assign_cohorts(&sim.panel, &sim.wage_index, &filter)?;
    println!("included: {}", cohorts.n_included());
    for (reason, n) in cohorts.exclusion_counts() {
        match reason {
            Some(r) => println!("  excluded ({r:?}): {n}"),
            None => println!("  included: {n}"),
        }
    }

    // a tighter death window keeps fewer persons
    let strict = assign_cohorts(
        &sim.panel,
        &sim.wage_index,
        &FilterSpec {
            death_window: 0,
            ..filter
        },
    )?;
    println!("with a zero-year death window: {}", strict.n_included());

    for cat in SizeCategory::ALL {
        let n: usize = cohorts.cohort_sizes(Some(cat)).values().sum();
        println!("category {cat:?}: {n} persons");
    }
    Ok(())
}
