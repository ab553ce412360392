//! Generate a synthetic staggered-adoption panel and look at what it holds.
//!
//! cargo run --example simulate_panel

use stagdid::synth::{simulate_panel, DgpConfig, EffectModel};

fn main() -> stagdid::Result<()> {
    let cfg = DgpConfig {
        years: (2000, 2014),
        cohorts: (2003..=2012).map(|g| (g, 50)).collect(),
        never_treated: 100,
        effect: EffectModel::HeterogeneousDecay {
            base: -20.0,
            cohort_slope: 0.05,
            decay: 0.9,
        },
        seed: 7,
        ..DgpConfig::default()
    };
    let sim = simulate_panel(&cfg)?;
    println!(
        "{} persons x {} years = {} observations",
        sim.panel.n_persons(),
        sim.panel.n_years(),
        sim.panel.n_observations()
    );
    println!("cohort sizes: {:?}", sim.cohorts.cohort_sizes(None));

    println!("true effects of the first cohort:");
    for s in 0..=5 {
        println!("  s = {s}: {:.3}", sim.truth.get(2003, s).unwrap_or(f64::NAN));
    }

    // same seed, same panel
    assert_eq!(simulate_panel(&cfg)?.panel, sim.panel);
    Ok(())
}
