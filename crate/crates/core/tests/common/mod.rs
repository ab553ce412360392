#![allow(dead_code)]

use stagdid::panel::{CohortEntry, CohortTable, PanelDataset, PersonId, RawObservation, SizeCategory};

/// Panel of persons with given event years and wage paths starting at
/// `first`; every person is included with a category I2 transfer.
pub fn toy_panel(people: &[(i32, Vec<f64>)], first: i32) -> (PanelDataset, CohortTable) {
    let rows = people
        .iter()
        .enumerate()
        .flat_map(|(i, (_, ys))| {
            ys.iter().enumerate().map(move |(k, &y)| RawObservation {
                person: PersonId(i as u64 + 1),
                year: first + k as i32,
                wage: y,
                business_income: 0.0,
                birth_year: 1950 + (i % 5) as i32,
                sex: (i % 2) as u8,
                education_level: (i % 4) as u8,
                transfer_amount: 0.0,
                age: None,
                parent_death_years: vec![],
                relative_death_years: vec![],
            })
        })
        .collect();
    let panel = PanelDataset::from_observations(rows).unwrap();
    let entries = people
        .iter()
        .enumerate()
        .map(|(i, (g, _))| CohortEntry {
            person: PersonId(i as u64 + 1),
            event_year: Some(*g),
            category: Some(SizeCategory::I2),
            death_year: Some(*g),
            exclusion: None,
        })
        .collect();
    let cohorts = CohortTable::new(&panel, entries).unwrap();
    (panel, cohorts)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `(mean_T,t - mean_T,ref) - (mean_C,t - mean_C,ref)`.
pub fn four_means(treated: &[Vec<f64>], controls: &[Vec<f64>], t: usize, r: usize) -> f64 {
    let m = |g: &[Vec<f64>], k: usize| mean(&g.iter().map(|y| y[k]).collect::<Vec<_>>());
    (m(treated, t) - m(treated, r)) - (m(controls, t) - m(controls, r))
}
