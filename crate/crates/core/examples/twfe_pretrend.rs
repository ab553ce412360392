//! Dynamic two-way fixed effects versus the staggered estimator when
//! effects differ across cohorts.
//!
//! cargo run --release --example twfe_pretrend

use stagdid::aggregate::AggregationScheme;
use stagdid::did::TreatmentSpec;
use stagdid::inference::{bootstrap_event_study, BootstrapSpec};
use stagdid::panel::Variable;
use stagdid::synth::{simulate_panel, DgpConfig, EffectModel};
use stagdid::twfe::{compare_pretrends, estimate_dynamic_twfe, TwfeSpec};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2015).map(|g| (g, 500)).collect(),
        effect: EffectModel::HeterogeneousDecay {
            base: -20.0,
            cohort_slope: 0.02,
            decay: 0.95,
        },
        seed: 3,
        ..DgpConfig::default()
    })?;
    let twfe = estimate_dynamic_twfe(&sim.panel, &sim.cohorts, &TwfeSpec::default())?;
    let staggered = bootstrap_event_study(
        &sim.panel,
        &sim.cohorts,
        &TreatmentSpec::default(),
        &AggregationScheme::default(),
        &BootstrapSpec {
            replicates: 99,
            ..BootstrapSpec::new(5)
        },
        Variable::Wage,
    )?;
    let report = compare_pretrends(&twfe, &staggered.curve, -3);
    for r in &report.rows {
        println!(
            "s={:>3}  twfe {:>8.3} ({:.3}){}  staggered {:>8.3} ({:.3}){}",
            r.s,
            r.twfe,
            r.twfe_se,
            if r.twfe_significant { "*" } else { " " },
            r.staggered,
            r.staggered_se,
            if r.staggered_significant { "*" } else { " " },
        );
    }
    if let Some(w) = &report.warning {
        println!("{w}");
    }
    Ok(())
}
