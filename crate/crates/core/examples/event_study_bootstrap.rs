//! Aggregate cells into an event-study curve with bootstrap bands.
//!
//! cargo run --release --example event_study_bootstrap

use stagdid::aggregate::AggregationScheme;
use stagdid::did::TreatmentSpec;
use stagdid::inference::{bootstrap_event_study, BootstrapSpec};
use stagdid::panel::Variable;
use stagdid::synth::{simulate_panel, DgpConfig, EffectModel};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2017).map(|g| (g, 100)).collect(),
        effect: EffectModel::HeterogeneousDecay {
            base: -20.0,
            cohort_slope: 0.02,
            decay: 0.95,
        },
        ..DgpConfig::default()
    })?;
    let boot = BootstrapSpec {
        replicates: 199,
        ..BootstrapSpec::new(11)
    };
    let result = bootstrap_event_study(
        &sim.panel,
        &sim.cohorts,
        &TreatmentSpec::default(),
        &AggregationScheme::default(),
        &boot,
        Variable::Wage,
    )?;
    println!("{:>4} {:>9} {:>20} {:>7}", "s", "beta", "95% band", "cohorts");
    for p in result.curve.points.iter().filter(|p| (-8..=8).contains(&p.s)) {
        let (Some(b), Some((lo, hi))) = (p.estimate, p.ci) else {
            continue;
        };
        println!("{:>4} {b:>9.3} [{lo:>8.3}, {hi:>8.3}] {:>7}", p.s, p.n_cohorts);
    }
    Ok(())
}
