//! Transfer-death proximity shares and sample means.
//!
//! cargo run --example descriptives

use stagdid::panel::{death_proximity_table, sample_means, DeathSet, Grouping, MeansAt, PROXIMITY_COLUMNS};
use stagdid::synth::{simulate_panel, DgpConfig};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2017).map(|g| (g, 30)).collect(),
        death_offset: 1,
        ..DgpConfig::default()
    })?;

    let deltas: Vec<u32> = (0..=3).collect();
    let t = death_proximity_table(&sim.panel, &sim.wage_index, &deltas, DeathSet::Parental)?;
    println!("delta {}", PROXIMITY_COLUMNS.join("  "));
    for row in &t.rows {
        let cells: Vec<String> = row
            .shares
            .iter()
            .map(|s| s.map_or("NA".into(), |v| format!("{v:.1}")))
            .collect();
        println!("{:>5} {}", row.delta, cells.join("  "));
    }

    let means = sample_means(&sim.panel, &sim.cohorts, Grouping::Sex, MeansAt::EventYear);
    for g in &means.groups {
        let wage = means
            .variables
            .iter()
            .position(|v| v.name() == "wage")
            .and_then(|i| g.means[i]);
        println!("{}: {} persons, mean wage at event {:?}", g.label, g.persons, wage);
    }
    Ok(())
}
