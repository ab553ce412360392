//! Restrict controls to cohorts treated soon after the treated cohort.
//!
//! cargo run --example nearest_controls

use stagdid::did::{control_set, estimate_all_cells, CellIndex, ControlStrategy, TreatmentSpec};
use stagdid::panel::Variable;
use stagdid::synth::{simulate_panel, DgpConfig};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2017).map(|g| (g, 60)).collect(),
        ..DgpConfig::default()
    })?;
    let cell = CellIndex::new(2000, 2001);
    for control in [ControlStrategy::AllNotYetTreated, ControlStrategy::NearestN(10), ControlStrategy::NearestN(6)] {
        let spec = TreatmentSpec {
            control,
            ..TreatmentSpec::default()
        };
        let controls = control_set(cell, &sim.cohorts, &spec);
        let h = estimate_all_cells(&sim.panel, &sim.cohorts, &spec, Variable::Wage)?;
        let max_s = h.estimates.iter().map(|e| e.event_time()).max();
        println!(
            "{control}: {} control persons for {cell:?}; {} estimable cells, latest s = {max_s:?}",
            controls.len(),
            h.estimates.len()
        );
    }
    Ok(())
}
