mod common;

use std::collections::BTreeMap;

use common::toy_panel;
use stagdid::aggregate::{aggregate, balanced_cohort_set, to_relative_time, AggregationScheme};
use stagdid::did::{estimate_all_cells, valid_cohort_range, TreatmentSpec};
use stagdid::matching::{matched_event_estimates, run_matching, MatchSpec, MatchedPair, OutcomeTransform};
use stagdid::panel::{assign_cohorts, sample_means, FilterSpec, Grouping, MeansAt, Variable};
use stagdid::synth::{simulate_panel, true_att, DgpConfig, EffectModel, Selection};
use stagdid::twfe::{estimate_dynamic_twfe, TwfeSpec};

fn noiseless(effect: EffectModel) -> DgpConfig {
    DgpConfig {
        years: (2000, 2014),
        cohorts: (2003..=2014).map(|g| (g, 6)).collect(),
        effect,
        person_sd: 0.0,
        year_sd: 0.0,
        year_trend: 0.0,
        noise_sd: 0.0,
        education_effect: 0.0,
        age_profile: (0.0, 0.0),
        ..DgpConfig::default()
    }
}

#[test]
fn simulated_cohorts_are_recovered_by_the_filters() {
    let cfg = DgpConfig {
        never_treated: 50,
        ..noiseless(EffectModel::Constant(-5.0))
    };
    let sim = simulate_panel(&cfg).unwrap();
    let assigned = assign_cohorts(&sim.panel, &sim.wage_index, &FilterSpec::default()).unwrap();
    assert_eq!(assigned, sim.cohorts);
    assert_eq!(assigned.n_included(), 12 * 6);
}

#[test]
fn seeded_generation_is_deterministic() {
    let cfg = DgpConfig {
        seed: 42,
        ..DgpConfig::default()
    };
    assert_eq!(simulate_panel(&cfg).unwrap(), simulate_panel(&cfg).unwrap());
    let other = DgpConfig { seed: 43, ..cfg };
    assert_ne!(simulate_panel(&other).unwrap().panel, simulate_panel(&DgpConfig::default()).unwrap().panel);
}

#[test]
fn noiseless_cells_equal_the_truth() {
    let cfg = noiseless(EffectModel::HeterogeneousDecay {
        base: -20.0,
        cohort_slope: 0.05,
        decay: 0.9,
    });
    let sim = simulate_panel(&cfg).unwrap();
    let spec = TreatmentSpec {
        covariates: vec![],
        anticipation: 0,
        ..TreatmentSpec::default()
    };
    let h = estimate_all_cells(&sim.panel, &sim.cohorts, &spec, Variable::Wage).unwrap();
    assert!(!h.estimates.is_empty());
    for e in &h.estimates {
        let s = e.event_time();
        let tau_t = if s >= 0 { sim.truth.get(e.cell.g, s).unwrap() } else { 0.0 };
        let r = -spec.ref_offset;
        let tau_ref = if r >= 0 { sim.truth.get(e.cell.g, r).unwrap() } else { 0.0 };
        assert!((e.beta - (tau_t - tau_ref)).abs() < 1e-9, "{:?}: {} vs {}", e.cell, e.beta, tau_t);
    }
}

#[test]
fn noiseless_leads_are_exactly_zero_with_age_controls() {
    let cfg = DgpConfig {
        effect: EffectModel::Constant(-20.0),
        noise_sd: 0.0,
        person_sd: 0.0,
        education_effect: 0.0,
        ..DgpConfig::default()
    };
    let sim = simulate_panel(&cfg).unwrap();
    // year effects and the age profile remain; both are absorbed exactly
    let spec = TreatmentSpec {
        anticipation: 0,
        ..TreatmentSpec::default()
    };
    let h = estimate_all_cells(&sim.panel, &sim.cohorts, &spec, Variable::Wage).unwrap();
    let leads: Vec<f64> = h
        .estimates
        .iter()
        .filter(|e| e.event_time() < 0)
        .map(|e| e.beta)
        .collect();
    assert!(!leads.is_empty());
    assert!(leads.iter().all(|b| b.abs() < 1e-6), "{:?}", leads.iter().fold(0.0f64, |m, b| m.max(b.abs())));
}

#[test]
fn aggregated_curve_targets_true_att() {
    let cfg = noiseless(EffectModel::HeterogeneousDecay {
        base: -10.0,
        cohort_slope: 0.1,
        decay: 1.0,
    });
    let sim = simulate_panel(&cfg).unwrap();
    let spec = TreatmentSpec {
        covariates: vec![],
        anticipation: 0,
        ..TreatmentSpec::default()
    };
    let h = estimate_all_cells(&sim.panel, &sim.cohorts, &spec, Variable::Wage).unwrap();
    let cells = to_relative_time(&h).unwrap();
    let sizes = sim.cohorts.cohort_sizes(None);
    let scheme = AggregationScheme::default();
    let curve = aggregate(&cells, &sizes, &scheme).unwrap();
    let truth = sim.truth.restrict_to(&cells);
    let att = true_att(&truth, &scheme, &sizes).unwrap();
    for p in &curve.points {
        if let (Some(est), Some(t)) = (p.estimate, att.get(&p.s)) {
            assert!((est - t).abs() < 1e-9, "s={}", p.s);
        }
    }
}

#[test]
fn baseline_windows_and_balanced_sets() {
    let spec = TreatmentSpec::default();
    assert_eq!(valid_cohort_range((1993, 2017), &spec).unwrap(), (1996, 2014));
    let sim = simulate_panel(&DgpConfig {
        cohorts: (1996..=2017).map(|g| (g, 3)).collect(),
        ..DgpConfig::default()
    })
    .unwrap();
    let covs = TreatmentSpec {
        covariates: vec![],
        ..spec
    };
    let h = estimate_all_cells(&sim.panel, &sim.cohorts, &covs, Variable::Wage).unwrap();
    assert_eq!(h.display_dims(), (19, 22));
    let cells = to_relative_time(&h).unwrap();
    let set = |a, b| balanced_cohort_set(&cells, a, b).unwrap().into_iter().collect::<Vec<i32>>();
    assert_eq!(set(-10, 10), vec![2003, 2004]);
    assert_eq!(set(-5, 10), (1998..=2004).collect::<Vec<_>>());
    assert_eq!(set(-3, 15), (1996..=1999).collect::<Vec<_>>());
}

#[test]
fn twfe_recovers_a_homogeneous_effect() {
    let cfg = DgpConfig {
        years: (2000, 2014),
        cohorts: (2003..=2012).map(|g| (g, 60)).collect(),
        effect: EffectModel::Constant(-15.0),
        seed: 8,
        ..DgpConfig::default()
    };
    let sim = simulate_panel(&cfg).unwrap();
    let r = estimate_dynamic_twfe(&sim.panel, &sim.cohorts, &TwfeSpec::default()).unwrap();
    for c in r.coefficients.iter().filter(|c| (0..=3).contains(&c.s)) {
        assert!((c.coef + 15.0).abs() < 4.0 * c.se, "s={} {} se {}", c.s, c.coef, c.se);
    }
}

#[test]
fn identical_matched_paths_give_zero() {
    let path: Vec<f64> = (0..10).map(|t| 100.0 + f64::from(t)).collect();
    let (panel, _) = toy_panel(&[(5, path.clone()), (9, path)], 1);
    let pairs = [MatchedPair {
        treated: 0,
        control: 1,
        event_year: 5,
    }];
    let est = matched_event_estimates(&panel, &pairs, Variable::Wage, OutcomeTransform::Ihs, (-6, 6)).unwrap();
    assert_eq!(est.len(), 13);
    for e in &est {
        if e.n_pairs > 0 {
            assert_eq!(e.estimate, Some(0.0));
        } else {
            assert_eq!(e.dropped, 1);
        }
    }
    // years -1, 0 and 11 fall outside the panel
    assert_eq!(est.iter().filter(|e| e.dropped == 1).count(), 3);
}

#[test]
fn matching_balance_has_a_row_per_covariate() {
    let cfg = DgpConfig {
        years: (1993, 2017),
        cohorts: (2000..=2004).map(|g| (g, 40)).collect(),
        never_treated: 400,
        effect: EffectModel::Constant(-20.0),
        selection: Some(Selection {
            intercept: -1.0,
            education: 0.3,
            sex: 0.5,
        }),
        ..DgpConfig::default()
    };
    let sim = simulate_panel(&cfg).unwrap();
    let spec = MatchSpec {
        covariates: vec![Variable::Age, Variable::Sex, Variable::EducationLevel],
        ..MatchSpec::default()
    };
    let r = run_matching(&sim.panel, &sim.cohorts, &spec).unwrap();
    assert_eq!(r.balance.len(), 3);
    assert_eq!(r.pairs.len(), 200);
    assert_eq!(r.fits.len(), 5);
    for f in r.fits.values() {
        assert!(f.converged);
        assert!(f.trajectory.windows(2).all(|w| w[1] >= w[0]));
    }
    let edu = &r.balance[2];
    assert!(edu.std_diff_after.abs() < edu.std_diff_before.abs());
}

#[test]
fn event_year_means_by_category() {
    let sim = simulate_panel(&noiseless(EffectModel::Constant(0.0))).unwrap();
    let t = sample_means(&sim.panel, &sim.cohorts, Grouping::Category, MeansAt::EventYear);
    assert_eq!(t.groups[0].persons, 72);
    let i4 = t.groups.iter().find(|g| g.label == "I4").unwrap();
    assert_eq!(i4.persons, 72);
    let sizes: BTreeMap<i32, usize> = sim.cohorts.cohort_sizes(None);
    assert_eq!(sizes.values().sum::<usize>(), 72);
}
