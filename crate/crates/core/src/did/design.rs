//! Cell designs shared by the exact cell estimator and the bootstrap path.
//!
//! Every cell regression only sees period x group x covariate-profile
//! combinations, so the panel is reduced once to per-person outcome and
//! profile arrays, and optionally to per (cohort, year, profile) weighted
//! sums from which any cell design can be assembled without touching
//! persons again.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{PivotPlan, PivotedCholesky, GRAM_TOL};
use crate::panel::{CohortTable, PanelDataset, Variable};
use crate::regression::CompressedDesign;

use super::{is_control_cohort, CellIndex, TreatmentSpec};

pub(super) const INTERCEPT: &str = "intercept";
pub(super) const PERIOD: &str = "period";
pub(super) const TREATED: &str = "treated";
pub(super) const INTERACTION: &str = "interaction";

/// Design-row key: period indicator, group indicator, covariate profile.
pub(super) type RowKey = (u8, u8, u32);

/// Outcomes and covariate profiles of every person with an event.
#[derive(Debug, Clone)]
pub struct PreparedPanel {
    pub(super) first_year: i32,
    pub(super) n_years: usize,
    /// Panel person index per slot.
    pub(super) persons: Vec<usize>,
    /// Distinct event years, ascending.
    pub(super) cohort_years: Vec<i32>,
    pub(super) members: Vec<Vec<usize>>,
    /// Outcome per slot-year.
    pub(super) y: Vec<f64>,
    /// Profile id per slot-year.
    pub(super) profile: Vec<u32>,
    /// Covariate levels per profile id, ids in ascending level order.
    pub(super) profiles: Vec<Vec<i32>>,
    pub(super) covariates: Vec<Variable>,
    agg_pos: Vec<u32>,
    /// Start of each (cohort, year) block in the aggregate arrays.
    agg_offsets: Vec<usize>,
    agg_profile: Vec<u32>,
}

/// Weighted counts and outcome sums per (cohort, year, profile).
#[derive(Debug, Clone, PartialEq)]
pub struct CohortAggregates {
    n: Vec<f64>,
    s: Vec<f64>,
}

/// Which cohorts and years enter a cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellPlan {
    pub cell: CellIndex,
    pub ref_year: i32,
    pub(super) ref_idx: usize,
    pub(super) t_idx: usize,
    pub(super) treated: usize,
    pub(super) controls: Vec<usize>,
}

impl CellPlan {
    pub fn control_cohorts<'a>(&'a self, prepared: &'a PreparedPanel) -> impl Iterator<Item = i32> + 'a {
        self.controls.iter().map(|&c| prepared.cohort_years[c])
    }
}

impl PreparedPanel {
    pub fn new(
        panel: &PanelDataset,
        cohorts: &CohortTable,
        spec: &TreatmentSpec,
        outcome: Variable,
    ) -> Self {
        let n_years = panel.n_years();
        let mut by_cohort: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for p in 0..panel.n_persons() {
            if let Some(g) = cohorts.cohort_of(p, spec.category) {
                by_cohort.entry(g).or_default().push(p);
            }
        }
        let cohort_years: Vec<i32> = by_cohort.keys().copied().collect();
        let mut persons = Vec::new();
        let mut members = Vec::with_capacity(cohort_years.len());
        for ps in by_cohort.values() {
            let mut m = Vec::with_capacity(ps.len());
            for &p in ps {
                m.push(persons.len());
                persons.push(p);
            }
            members.push(m);
        }

        let mut y = Vec::with_capacity(persons.len() * n_years);
        let mut raw_profiles: Vec<Vec<i32>> = Vec::with_capacity(persons.len() * n_years);
        for &p in &persons {
            for t in 0..n_years {
                y.push(panel.value(outcome, p, t));
                raw_profiles.push(spec.covariates.iter().map(|v| panel.level(*v, p, t)).collect());
            }
        }
        let mut ids: BTreeMap<Vec<i32>, u32> = raw_profiles.iter().map(|k| (k.clone(), 0)).collect();
        for (i, v) in ids.values_mut().enumerate() {
            *v = i as u32;
        }
        let profile: Vec<u32> = raw_profiles.iter().map(|k| ids[k]).collect();
        let profiles: Vec<Vec<i32>> = ids.into_keys().collect();

        // aggregate layout: distinct profiles per (cohort, year) block
        let mut agg_pos = vec![0u32; profile.len()];
        let mut agg_offsets = Vec::with_capacity(cohort_years.len() * n_years + 1);
        let mut agg_profile = Vec::new();
        for m in &members {
            for t in 0..n_years {
                agg_offsets.push(agg_profile.len());
                let mut distinct: Vec<u32> = m.iter().map(|&s| profile[s * n_years + t]).collect();
                distinct.sort_unstable();
                distinct.dedup();
                let base = agg_profile.len();
                for &s in m {
                    let k = profile[s * n_years + t];
                    let off = distinct.binary_search(&k).expect("profile present");
                    agg_pos[s * n_years + t] = (base + off) as u32;
                }
                agg_profile.extend(distinct);
            }
        }
        agg_offsets.push(agg_profile.len());

        PreparedPanel {
            first_year: panel.first_year(),
            n_years,
            persons,
            cohort_years,
            members,
            y,
            profile,
            profiles,
            covariates: spec.covariates.clone(),
            agg_pos,
            agg_offsets,
            agg_profile,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.persons.len()
    }

    /// Panel person index of a slot.
    pub fn person(&self, slot: usize) -> usize {
        self.persons[slot]
    }

    /// Event years present, ascending.
    pub fn cohort_years(&self) -> &[i32] {
        &self.cohort_years
    }

    /// Slots of each cohort, aligned with [`Self::cohort_years`].
    pub fn cohort_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn cohort_sizes(&self) -> BTreeMap<i32, usize> {
        self.cohort_years
            .iter()
            .zip(&self.members)
            .map(|(&g, m)| (g, m.len()))
            .collect()
    }

    pub fn years(&self) -> (i32, i32) {
        (self.first_year, self.first_year + self.n_years as i32 - 1)
    }

    fn year_index(&self, year: i32) -> Option<usize> {
        let i = year - self.first_year;
        (i >= 0 && (i as usize) < self.n_years).then_some(i as usize)
    }

    /// Cohorts and years entering a cell, or why there are none.
    pub fn plan(&self, cell: CellIndex, spec: &TreatmentSpec) -> Result<CellPlan> {
        let inestimable = |reason: &str| Error::Inestimable {
            cell,
            reason: reason.to_string(),
        };
        let ref_year = cell.g - spec.ref_offset;
        if cell.t == ref_year {
            return Err(inestimable("reference period"));
        }
        let (Some(ref_idx), Some(t_idx)) = (self.year_index(ref_year), self.year_index(cell.t)) else {
            return Err(inestimable("period outside the panel"));
        };
        let treated = self
            .cohort_years
            .binary_search(&cell.g)
            .map_err(|_| inestimable("treated cohort is empty"))?;
        let controls: Vec<usize> = (0..self.cohort_years.len())
            .filter(|&c| is_control_cohort(self.cohort_years[c], cell, spec))
            .collect();
        if controls.is_empty() {
            return Err(inestimable("control set is empty"));
        }
        Ok(CellPlan {
            cell,
            ref_year,
            ref_idx,
            t_idx,
            treated,
            controls,
        })
    }

    /// Unit-weight aggregates, or weighted by per-slot multiplicities.
    pub fn aggregates(&self, weights: Option<&[u32]>) -> CohortAggregates {
        let len = self.agg_profile.len();
        let mut n = vec![0.0; len];
        let mut s = vec![0.0; len];
        for slot in 0..self.persons.len() {
            let w = weights.map_or(1.0, |w| f64::from(w[slot]));
            if w == 0.0 {
                continue;
            }
            let base = slot * self.n_years;
            for t in 0..self.n_years {
                let pos = self.agg_pos[base + t] as usize;
                n[pos] += w;
                s[pos] += w * self.y[base + t];
            }
        }
        CohortAggregates { n, s }
    }

    /// Interaction coefficient of a cell from aggregates; equal to the
    /// exact estimator's coefficient when weights are all one.
    pub fn cell_beta(&self, plan: &CellPlan, agg: &CohortAggregates, scratch: &mut Scratch) -> Result<f64> {
        scratch.reset(self.profiles.len());
        let add = |c: usize, t: usize, d: u8, g: u8, scratch: &mut Scratch| {
            let b = c * self.n_years + t;
            for pos in self.agg_offsets[b]..self.agg_offsets[b + 1] {
                if agg.n[pos] > 0.0 {
                    scratch.add(self.agg_profile[pos], d, g, agg.n[pos], agg.s[pos]);
                }
            }
        };
        add(plan.treated, plan.ref_idx, 0, 1, scratch);
        add(plan.treated, plan.t_idx, 1, 1, scratch);
        for &c in &plan.controls {
            add(c, plan.ref_idx, 0, 0, scratch);
            add(c, plan.t_idx, 1, 0, scratch);
        }
        if self.covariates.len() <= 1 {
            scratch.within_profile_beta(plan.cell)
        } else {
            let (keys, counts, sums) = scratch.rows();
            let (names, rows) = design(&keys, &self.profiles, &self.covariates);
            let qr = CompressedDesign {
                names,
                rows,
                counts,
                sums,
                plan: cell_pivot_plan(),
            }
            .decompose();
            let k = qr.n_cols;
            qr.coefficients()[k - 1].ok_or_else(|| interaction_dropped(plan.cell))
        }
    }
}

pub(super) fn cell_pivot_plan() -> PivotPlan {
    PivotPlan {
        leading: 3,
        trailing: 1,
    }
}

pub(super) fn interaction_dropped(cell: CellIndex) -> Error {
    Error::Estimation(format!(
        "interaction column is collinear in cell (g={}, t={})",
        cell.g, cell.t
    ))
}

/// Column names and design rows for distinct row keys: intercept, period,
/// treated, one indicator per covariate level present (lowest omitted),
/// interaction last.
pub(super) fn design(
    keys: &[RowKey],
    profiles: &[Vec<i32>],
    covariates: &[Variable],
) -> (Vec<String>, Vec<Vec<f64>>) {
    let levels: Vec<Vec<i32>> = (0..covariates.len())
        .map(|j| {
            let mut l: Vec<i32> = keys.iter().map(|k| profiles[k.2 as usize][j]).collect();
            l.sort_unstable();
            l.dedup();
            l
        })
        .collect();
    let mut names = vec![INTERCEPT.to_string(), PERIOD.to_string(), TREATED.to_string()];
    for (v, l) in covariates.iter().zip(&levels) {
        names.extend(l.iter().skip(1).map(|x| format!("{v}={x}")));
    }
    names.push(INTERACTION.to_string());
    let rows = keys
        .iter()
        .map(|&(d, g, p)| {
            let mut row = vec![1.0, f64::from(d), f64::from(g)];
            for (j, l) in levels.iter().enumerate() {
                let x = profiles[p as usize][j];
                row.extend(l.iter().skip(1).map(|&v| f64::from(u8::from(v == x))));
            }
            row.push(f64::from(d * g));
            row
        })
        .collect();
    (names, rows)
}

/// Reusable buffers for assembling cells from aggregates.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    /// Per profile and (d, G) combination: count and outcome sum.
    n: Vec<[f64; 4]>,
    s: Vec<[f64; 4]>,
    touched: Vec<u32>,
}

impl Scratch {
    fn reset(&mut self, n_profiles: usize) {
        if self.n.len() != n_profiles {
            self.n = vec![[0.0; 4]; n_profiles];
            self.s = vec![[0.0; 4]; n_profiles];
            self.touched.clear();
        }
        for &p in &self.touched {
            self.n[p as usize] = [0.0; 4];
            self.s[p as usize] = [0.0; 4];
        }
        self.touched.clear();
    }

    fn add(&mut self, profile: u32, d: u8, g: u8, n: f64, s: f64) {
        let p = profile as usize;
        if self.n[p] == [0.0; 4] {
            self.touched.push(profile);
        }
        let k = usize::from(d) * 2 + usize::from(g);
        self.n[p][k] += n;
        self.s[p][k] += s;
    }

    fn rows(&mut self) -> (Vec<RowKey>, Vec<f64>, Vec<f64>) {
        self.touched.sort_unstable();
        let mut keys = Vec::new();
        let mut counts = Vec::new();
        let mut sums = Vec::new();
        for d in 0..2u8 {
            for g in 0..2u8 {
                for &p in &self.touched {
                    let k = usize::from(d) * 2 + usize::from(g);
                    let n = self.n[p as usize][k];
                    if n > 0.0 {
                        keys.push((d, g, p));
                        counts.push(n);
                        sums.push(self.s[p as usize][k]);
                    }
                }
            }
        }
        (keys, counts, sums)
    }

    /// Interaction coefficient after sweeping out profile means.
    fn within_profile_beta(&mut self, cell: CellIndex) -> Result<f64> {
        self.touched.sort_unstable();
        let mut a = vec![vec![0.0; 3]; 3];
        let mut b = [0.0; 3];
        for &p in &self.touched {
            let n = &self.n[p as usize];
            let s = &self.s[p as usize];
            let total: f64 = n.iter().sum();
            // regressors per combination k = 2d + g: (d, G, D)
            let x = |k: usize| [(k >> 1) as f64, (k & 1) as f64, (k == 3) as u8 as f64];
            let mean = [(n[2] + n[3]) / total, (n[1] + n[3]) / total, n[3] / total];
            for k in 0..4 {
                if n[k] == 0.0 {
                    continue;
                }
                let xk = x(k);
                let dev = [xk[0] - mean[0], xk[1] - mean[1], xk[2] - mean[2]];
                for i in 0..3 {
                    b[i] += dev[i] * s[k];
                    for j in 0..3 {
                        a[i][j] += n[k] * dev[i] * dev[j];
                    }
                }
            }
        }
        let ch = PivotedCholesky::decompose(
            &a,
            PivotPlan {
                leading: 0,
                trailing: 1,
            },
            GRAM_TOL,
        );
        ch.solve(&b)[2].ok_or_else(|| interaction_dropped(cell))
    }
}
