//! Logistic propensity scores, nearest-one matching and matched event
//! estimates on a panel where treatment selects on education and sex.
//!
//! cargo run --example propensity_matching

use stagdid::matching::{run_matching, MatchSpec, OutcomeTransform};
use stagdid::panel::Variable;
use stagdid::synth::{simulate_panel, DgpConfig, EffectModel, Selection};

fn main() -> stagdid::Result<()> {
    let sim = simulate_panel(&DgpConfig {
        cohorts: (2000..=2004).map(|g| (g, 100)).collect(),
        never_treated: 2000,
        effect: EffectModel::Constant(-20.0),
        selection: Some(Selection {
            intercept: -1.0,
            education: 0.3,
            sex: 0.5,
        }),
        ..DgpConfig::default()
    })?;
    let spec = MatchSpec {
        covariates: vec![Variable::Age, Variable::Sex, Variable::EducationLevel],
        transform: OutcomeTransform::Identity,
        ..MatchSpec::default()
    };
    let r = run_matching(&sim.panel, &sim.cohorts, &spec)?;

    for (g, fit) in &r.fits {
        println!(
            "cohort {g}: {} IRLS iterations, log-likelihood {:.2}, coefficients {:?}",
            fit.iterations,
            fit.log_likelihood,
            fit.coefficients.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>()
        );
    }
    println!("\n{:<16} {:>10} {:>10}", "covariate", "std diff", "after");
    for b in &r.balance {
        println!("{:<16} {:>10.3} {:>10.3}", b.covariate, b.std_diff_before, b.std_diff_after);
    }
    println!();
    for e in &r.estimates {
        if let (Some(est), Some(se)) = (e.estimate, e.se) {
            println!("s={:>3} {est:>8.2} ({se:.2})  n={}", e.s, e.n_pairs);
        }
    }
    Ok(())
}
