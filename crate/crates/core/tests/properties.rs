mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::{four_means, toy_panel};
use stagdid::aggregate::{aggregate_unbalanced, cohort_weights, RelativeCells};
use stagdid::did::{estimate_cell, CellEstimate, CellIndex, TreatmentSpec};
use stagdid::inference::{bootstrap_event_study, BootstrapSpec};
use stagdid::linalg::PivotPlan;
use stagdid::matching::{ihs, nearest_one_match};
use stagdid::panel::{
    assign_cohorts, death_proximity_table, DeathSet, FilterSpec, PanelDataset, PersonId, RawObservation,
    SizeCategory, Variable, WageIndex,
};
use stagdid::regression::fit_clustered;
use stagdid::aggregate::AggregationScheme;
use stagdid::synth::{simulate_panel, DgpConfig, EffectModel};
use stagdid::twfe::within_transform;

fn no_cov() -> TreatmentSpec {
    TreatmentSpec {
        covariates: vec![],
        ..TreatmentSpec::default()
    }
}

/// Person: (transfer year offset, amount, death year offset).
fn transfer_panel(persons: &[(Option<(usize, f64)>, Option<usize>)]) -> PanelDataset {
    let rows = persons
        .iter()
        .enumerate()
        .flat_map(|(i, &(transfer, death))| {
            (0..10).map(move |k| RawObservation {
                person: PersonId(i as u64 + 1),
                year: 2000 + k as i32,
                wage: 100.0,
                business_income: 0.0,
                birth_year: 1960,
                sex: 0,
                education_level: 0,
                transfer_amount: match transfer {
                    Some((y, a)) if y == k => a,
                    _ => 0.0,
                },
                age: None,
                parent_death_years: death.map(|d| vec![2000 + d as i32]).unwrap_or_default(),
                relative_death_years: vec![],
            })
        })
        .collect();
    PanelDataset::from_observations(rows).unwrap()
}

fn person_strategy() -> impl Strategy<Value = (Option<(usize, f64)>, Option<usize>)> {
    (
        proptest::option::of((0usize..10, 1.0f64..2000.0)),
        proptest::option::of(0usize..10),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_amounts_fall_in_exactly_one_category(amount in 1e-6f64..1e6, wage in 1.0f64..1e4) {
        let c = SizeCategory::classify(amount, wage).unwrap();
        let bounds = [0.0, wage / 2.0, wage, 2.0 * wage, f64::INFINITY];
        let hits: Vec<usize> = (0..4)
            .filter(|&i| amount > bounds[i] && amount <= bounds[i + 1])
            .collect();
        prop_assert_eq!(hits, vec![c.index()]);
        prop_assert!(SizeCategory::classify(-amount, wage).is_none());
    }

    #[test]
    fn wider_death_window_never_shrinks_the_sample(
        persons in proptest::collection::vec(person_strategy(), 1..25),
        w in 0u32..4,
    ) {
        let panel = transfer_panel(&persons);
        let index = WageIndex::constant(2000..=2009, 100.0).unwrap();
        let count = |window: u32| {
            let filter = FilterSpec { death_window: window, birth_year_range: (1900, 2000), ..FilterSpec::default() };
            assign_cohorts(&panel, &index, &filter).unwrap().n_included()
        };
        prop_assert!(count(w) <= count(w + 1));
    }

    #[test]
    fn proximity_shares_grow_with_delta(persons in proptest::collection::vec(person_strategy(), 1..25)) {
        let panel = transfer_panel(&persons);
        let index = WageIndex::constant(2000..=2009, 100.0).unwrap();
        let table = death_proximity_table(&panel, &index, &[0, 1, 2, 3, 5, 9], DeathSet::Parental).unwrap();
        for pair in table.rows.windows(2) {
            for col in 0..5 {
                if let (Some(a), Some(b)) = (pair[0].shares[col], pair[1].shares[col]) {
                    prop_assert!(b >= a - 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariate_free_cell_equals_four_means(
        treated in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 10), 1..12),
        controls in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 10), 1..12),
    ) {
        let mut people: Vec<(i32, Vec<f64>)> = treated.iter().map(|y| (5, y.clone())).collect();
        people.extend(controls.iter().map(|y| (9, y.clone())));
        let (panel, cohorts) = toy_panel(&people, 1);
        let e = estimate_cell(&panel, &cohorts, CellIndex::new(5, 6), &no_cov(), Variable::Wage).unwrap();
        let expected = four_means(&treated, &controls, 5, 1);
        prop_assert!((e.beta - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
    }

    #[test]
    fn clustered_covariance_is_psd(
        ys in proptest::collection::vec(-10.0f64..10.0, 24),
        v in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        // 12 clusters of two observations on 4 distinct rows
        let rows = vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]];
        let clusters: Vec<Vec<(usize, f64)>> = (0..12)
            .map(|c| vec![(c % 4, ys[2 * c]), ((c + 1) % 4, ys[2 * c + 1])])
            .collect();
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let fit = fit_clustered(names, rows, PivotPlan { leading: 1, trailing: 1 }, &clusters);
        let k = fit.covariance.len();
        let q: f64 = (0..k).map(|i| (0..k).map(|j| v[i] * fit.covariance[i][j] * v[j]).sum::<f64>()).sum();
        let scale: f64 = (0..k).map(|i| fit.covariance[i][i].abs()).sum::<f64>();
        prop_assert!(q >= -1e-10 * (1.0 + scale));
    }

    #[test]
    fn cohort_weights_sum_to_one(
        sizes in proptest::collection::vec(1usize..500, 1..8),
        s in -3i32..3,
    ) {
        let cohort_sizes: BTreeMap<i32, usize> = sizes.iter().enumerate().map(|(i, &n)| (2000 + i as i32, n)).collect();
        let betas: BTreeMap<(i32, i32), f64> = cohort_sizes.keys().map(|&g| ((g, s), 1.0)).collect();
        let w = cohort_weights(&betas, &cohort_sizes, s, None).unwrap();
        prop_assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|x| x.1 > 0.0));
    }

    #[test]
    fn aggregation_is_linear_in_cell_estimates(
        b1 in proptest::collection::vec(-10.0f64..10.0, 12),
        b2 in proptest::collection::vec(-10.0f64..10.0, 12),
        a in -3.0f64..3.0,
        sizes in proptest::collection::vec(1usize..100, 4),
    ) {
        let cohort_sizes: BTreeMap<i32, usize> = (0..4).map(|i| (2000 + i, sizes[i as usize])).collect();
        let cells = |b: &[f64]| {
            let est: Vec<CellEstimate> = (0..12)
                .map(|k| {
                    let g = 2000 + (k % 4) as i32;
                    let s = (k / 4) as i32;
                    CellEstimate {
                        cell: CellIndex::new(g, g + s),
                        beta: b[k],
                        se: 1.0,
                        p_value: 0.5,
                        degenerate: false,
                        n_treated: 1,
                        n_control: 1,
                        dropped_columns: 0,
                    }
                })
                .collect();
            RelativeCells::from_parts(3, &est, &[]).unwrap()
        };
        let combo: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| x + a * y).collect();
        let c1 = aggregate_unbalanced(&cells(&b1), &cohort_sizes).unwrap();
        let c2 = aggregate_unbalanced(&cells(&b2), &cohort_sizes).unwrap();
        let c3 = aggregate_unbalanced(&cells(&combo), &cohort_sizes).unwrap();
        for s in 0..3 {
            let lhs = c3.estimate(s).unwrap();
            let rhs = c1.estimate(s).unwrap() + a * c2.estimate(s).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_score_transforms_keep_the_pairs(
        treated in proptest::collection::vec(0.01f64..0.99, 1..10),
        pool in proptest::collection::vec(0.01f64..0.99, 1..15),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let t: Vec<(PersonId, f64)> = treated.iter().enumerate().map(|(i, &s)| (PersonId(i as u64), s)).collect();
        let p: Vec<(PersonId, f64)> = pool.iter().enumerate().map(|(i, &s)| (PersonId(100 + i as u64), s)).collect();
        let map = |v: &[(PersonId, f64)], f: &dyn Fn(f64) -> f64| v.iter().map(|&(id, s)| (id, f(s))).collect::<Vec<_>>();
        let pairs = |t: &[(PersonId, f64)], p: &[(PersonId, f64)]| {
            nearest_one_match(t, p, None, true).unwrap().matches.iter().map(|m| (m.treated, m.control)).collect::<Vec<_>>()
        };
        let base = pairs(&t, &p);
        prop_assert_eq!(base.len(), t.len());
        // exact arithmetic is not preserved by a*s+b, so compare only where
        // the nearest candidate is not a near tie
        let affine = pairs(&map(&t, &|s| a * s + b), &map(&p, &|s| a * s + b));
        for ((tid, c1), (_, c2)) in base.iter().zip(&affine) {
            let score = t.iter().find(|x| x.0 == *tid).unwrap().1;
            let mut d: Vec<f64> = p.iter().map(|x| (x.1 - score).abs()).collect();
            d.sort_by(f64::total_cmp);
            if d.len() < 2 || d[1] - d[0] > 1e-9 {
                prop_assert_eq!(c1, c2);
            }
        }
        // any strictly increasing transform keeps the match among the two
        // order neighbours of the treated score
        let logit = |s: f64| (s / (1.0 - s)).ln();
        let lp = pairs(&map(&t, &logit), &map(&p, &logit));
        for (tid, c) in &lp {
            let score = t.iter().find(|x| x.0 == *tid).unwrap().1;
            let below = p.iter().filter(|x| x.1 <= score).map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let above = p.iter().filter(|x| x.1 >= score).map(|x| x.1).fold(f64::INFINITY, f64::min);
            let cs = p.iter().find(|x| x.0 == *c).unwrap().1;
            prop_assert!(cs == below || cs == above);
        }
    }

    #[test]
    fn ihs_is_odd(x in -1e6f64..1e6) {
        prop_assert_eq!(ihs(-x), -ihs(x));
        prop_assert!((ihs(x).sinh() - x).abs() <= 1e-9 * (1.0 + x.abs()));
    }

    #[test]
    fn within_transform_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 24)) {
        let once = within_transform(&v, 4, 6);
        let twice = within_transform(&once, 4, 6);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

fn small_dgp(seed: u64) -> DgpConfig {
    DgpConfig {
        years: (2000, 2011),
        cohorts: (2004..=2009).map(|g| (g, 40)).collect(),
        effect: EffectModel::Constant(-10.0),
        seed,
        ..DgpConfig::default()
    }
}

#[test]
fn bootstrap_is_reproducible_and_bands_nest() {
    let sim = simulate_panel(&small_dgp(3)).unwrap();
    let spec = TreatmentSpec::default();
    let scheme = AggregationScheme {
        display_range: (-5, 5),
        ..AggregationScheme::default()
    };
    let boot = BootstrapSpec {
        replicates: 59,
        level: 0.95,
        seed: 11,
    };
    let a = bootstrap_event_study(&sim.panel, &sim.cohorts, &spec, &scheme, &boot, Variable::Wage).unwrap();
    let b = bootstrap_event_study(&sim.panel, &sim.cohorts, &spec, &scheme, &boot, Variable::Wage).unwrap();
    assert_eq!(a, b);

    let narrow = bootstrap_event_study(
        &sim.panel,
        &sim.cohorts,
        &spec,
        &scheme,
        &BootstrapSpec { level: 0.8, ..boot },
        Variable::Wage,
    )
    .unwrap();
    assert_eq!(a.draws, narrow.draws);
    for (w, n) in a.curve.points.iter().zip(&narrow.curve.points) {
        if let (Some((wl, wh)), Some((nl, nh))) = (w.ci, n.ci) {
            assert!(wl <= nl && nh <= wh, "s={}", w.s);
        }
    }

    let other = bootstrap_event_study(
        &sim.panel,
        &sim.cohorts,
        &spec,
        &scheme,
        &BootstrapSpec { seed: 12, ..boot },
        Variable::Wage,
    )
    .unwrap();
    assert_ne!(a.draws, other.draws);
}

#[test]
fn bootstrap_is_identical_across_thread_counts() {
    let sim = simulate_panel(&small_dgp(4)).unwrap();
    let spec = TreatmentSpec::default();
    let scheme = AggregationScheme::default();
    let boot = BootstrapSpec {
        replicates: 31,
        level: 0.95,
        seed: 2,
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_event_study(&sim.panel, &sim.cohorts, &spec, &scheme, &boot, Variable::Wage).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn nearest_controls_only_shrink_the_control_set() {
    let sim = simulate_panel(&small_dgp(5)).unwrap();
    let all = TreatmentSpec::default();
    let near = TreatmentSpec {
        control: "nearest_2".parse().unwrap(),
        ..TreatmentSpec::default()
    };
    let mut compared = BTreeSet::new();
    for g in 2003..=2008 {
        for t in 2000..=2011 {
            let cell = CellIndex::new(g, t);
            let (Ok(a), Ok(n)) = (
                estimate_cell(&sim.panel, &sim.cohorts, cell, &all, Variable::Wage),
                estimate_cell(&sim.panel, &sim.cohorts, cell, &near, Variable::Wage),
            ) else {
                continue;
            };
            assert!(n.n_control <= a.n_control);
            compared.insert((g, t));
        }
    }
    assert!(!compared.is_empty());
}
