//! Estimate every cohort-year cell and print a corner of the heatmap.
//!
//! cargo run --example cell_heatmap

use stagdid::did::{estimate_all_cells, valid_cohort_range, CellIndex, TreatmentSpec};
use stagdid::panel::Variable;
use stagdid::synth::{simulate_panel, DgpConfig, EffectModel};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2017).map(|g| (g, 100)).collect(),
        effect: EffectModel::Constant(-20.0),
        ..DgpConfig::default()
    })?;
    let spec = TreatmentSpec::default();
    println!("valid cohorts: {:?}", valid_cohort_range((1993, 2017), &spec)?);

    let h = estimate_all_cells(&sim.panel, &sim.cohorts, &spec, Variable::Wage)?;
    let (rows, cols) = h.display_dims();
    println!(
        "{} estimable cells, {} inestimable, display grid {rows} x {cols}",
        h.estimates.len(),
        h.inestimable.len()
    );

    let g = 2000;
    for t in 1995..=2005 {
        match h.get(CellIndex::new(g, t)) {
            Some(e) => println!(
                "g={g} t={t} s={:>3}  beta={:>8.3} se={:.3} p={:.3}  ({} treated, {} controls)",
                e.event_time(),
                e.beta,
                e.se,
                e.p_value,
                e.n_treated,
                e.n_control
            ),
            None => println!("g={g} t={t}  NA"),
        }
    }
    Ok(())
}
