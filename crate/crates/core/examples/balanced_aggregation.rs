//! Compare the unbalanced curve with a balanced one over a fixed horizon.
//!
//! cargo run --example balanced_aggregation

use stagdid::aggregate::{aggregate, balanced_cohort_set, to_relative_time, AggregationScheme};
use stagdid::did::{estimate_all_cells, TreatmentSpec};
use stagdid::panel::Variable;
use stagdid::synth::{simulate_panel, true_att, DgpConfig, EffectModel};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2017).map(|g| (g, 100)).collect(),
        effect: EffectModel::HeterogeneousDecay {
            base: -20.0,
            cohort_slope: 0.05,
            decay: 1.0,
        },
        ..DgpConfig::default()
    })?;
    let h = estimate_all_cells(&sim.panel, &sim.cohorts, &TreatmentSpec::default(), Variable::Wage)?;
    let cells = to_relative_time(&h)?;
    let sizes = sim.cohorts.cohort_sizes(None);

    for (a, b) in [(-10, 10), (-5, 10), (-3, 15)] {
        println!("balanced [{a}, {b}]: {:?}", balanced_cohort_set(&cells, a, b)?);
    }

    let truth = sim.truth.restrict_to(&cells);
    for scheme in [AggregationScheme::default(), AggregationScheme::balanced(-5, 10)] {
        let curve = aggregate(&cells, &sizes, &scheme)?;
        let att = true_att(&truth, &scheme, &sizes)?;
        println!("\n{}", scheme.tag());
        for s in [-5, 0, 5, 10] {
            if let (Some(est), Some(t)) = (curve.estimate(s), att.get(&s)) {
                println!("  s={s:>3} estimate {est:>8.3}  truth {t:>8.3}");
            }
        }
    }
    Ok(())
}
