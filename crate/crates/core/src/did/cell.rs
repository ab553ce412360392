use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::normal_p_value;
use crate::panel::{CohortTable, PanelDataset, Variable};
use crate::regression::fit_clustered;

use super::design::{cell_pivot_plan, design, interaction_dropped, RowKey};
use super::{valid_cohort_range, CellIndex, CellPlan, PreparedPanel, TreatmentSpec};

/// One cohort-year 2x2 coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub cell: CellIndex,
    pub beta: f64,
    pub se: f64,
    pub p_value: f64,
    /// Set when `se == 0` but `beta != 0`.
    pub degenerate: bool,
    pub n_treated: usize,
    pub n_control: usize,
    /// Covariate indicators removed for collinearity.
    pub dropped_columns: usize,
}

impl CellEstimate {
    pub fn event_time(&self) -> i32 {
        self.cell.event_time()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InestimableCell {
    pub cell: CellIndex,
    pub reason: String,
}

impl PreparedPanel {
    /// Exact cell regression with person-clustered standard errors.
    pub fn estimate(&self, cell: CellIndex, spec: &TreatmentSpec) -> Result<CellEstimate> {
        let plan = self.plan(cell, spec)?;
        self.estimate_planned(&plan)
    }

    pub fn estimate_planned(&self, plan: &CellPlan) -> Result<CellEstimate> {
        let ny = self.n_years;
        let treated = &self.members[plan.treated];
        let controls: Vec<usize> = plan
            .controls
            .iter()
            .flat_map(|&c| self.members[c].iter().copied())
            .collect();
        let groups = [(1u8, treated.as_slice()), (0u8, controls.as_slice())];

        let mut keys: Vec<RowKey> = Vec::new();
        for (g, slots) in groups {
            for &s in slots {
                keys.push((0, g, self.profile[s * ny + plan.ref_idx]));
                keys.push((1, g, self.profile[s * ny + plan.t_idx]));
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let row_of = |k: RowKey| keys.binary_search(&k).expect("key collected");

        let mut clusters: Vec<[(usize, f64); 2]> = Vec::with_capacity(treated.len() + controls.len());
        for (g, slots) in groups {
            for &s in slots {
                let (a, b) = (s * ny + plan.ref_idx, s * ny + plan.t_idx);
                clusters.push([
                    (row_of((0, g, self.profile[a])), self.y[a]),
                    (row_of((1, g, self.profile[b])), self.y[b]),
                ]);
            }
        }

        let (names, rows) = design(&keys, &self.profiles, &self.covariates);
        let k = names.len();
        let fit = fit_clustered(names, rows, cell_pivot_plan(), &clusters);
        let beta = fit.coefficients[k - 1].ok_or_else(|| interaction_dropped(plan.cell))?;
        let se = fit.se(k - 1).unwrap_or(f64::NAN);
        let (p_value, degenerate) = normal_p_value(beta, se);
        let dropped_columns = fit.dropped().iter().filter(|&&j| j >= 3 && j < k - 1).count();
        Ok(CellEstimate {
            cell: plan.cell,
            beta,
            se,
            p_value,
            degenerate,
            n_treated: treated.len(),
            n_control: controls.len(),
            dropped_columns,
        })
    }
}

/// The 2x2 estimate of one cell.
pub fn estimate_cell(
    panel: &PanelDataset,
    cohorts: &CohortTable,
    cell: CellIndex,
    spec: &TreatmentSpec,
    outcome: Variable,
) -> Result<CellEstimate> {
    spec.validate()?;
    PreparedPanel::new(panel, cohorts, spec, outcome).estimate(cell, spec)
}

/// All cohort-year estimates for treated cohorts in the valid range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub years: (i32, i32),
    pub cohort_range: (i32, i32),
    pub ref_offset: i32,
    /// Sorted by `(g, t)`.
    pub estimates: Vec<CellEstimate>,
    /// Cells without support, sorted by `(g, t)`; reference cells are not listed.
    pub inestimable: Vec<InestimableCell>,
}

/// One line of a heatmap export.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow<'a> {
    pub cell: CellIndex,
    pub estimate: Option<&'a CellEstimate>,
}

pub fn estimate_all_cells(
    panel: &PanelDataset,
    cohorts: &CohortTable,
    spec: &TreatmentSpec,
    outcome: Variable,
) -> Result<Heatmap> {
    spec.validate()?;
    let prepared = PreparedPanel::new(panel, cohorts, spec, outcome);
    Heatmap::from_prepared(&prepared, spec)
}

impl Heatmap {
    pub fn from_prepared(prepared: &PreparedPanel, spec: &TreatmentSpec) -> Result<Heatmap> {
        let years = prepared.years();
        let cohort_range = valid_cohort_range(years, spec)?;
        let cells: Vec<CellIndex> = (cohort_range.0..=cohort_range.1)
            .flat_map(|g| (years.0..=years.1).map(move |t| CellIndex::new(g, t)))
            .filter(|c| c.t != c.g - spec.ref_offset)
            .collect();
        let results: Vec<Result<CellEstimate>> = cells
            .par_iter()
            .map(|&c| prepared.estimate(c, spec))
            .collect();
        let mut estimates = Vec::new();
        let mut inestimable = Vec::new();
        for (cell, r) in cells.into_iter().zip(results) {
            match r {
                Ok(e) => estimates.push(e),
                Err(Error::Inestimable { reason, .. }) => inestimable.push(InestimableCell { cell, reason }),
                Err(Error::Estimation(reason)) => inestimable.push(InestimableCell { cell, reason }),
                Err(e) => return Err(e),
            }
        }
        Ok(Heatmap {
            years,
            cohort_range,
            ref_offset: spec.ref_offset,
            estimates,
            inestimable,
        })
    }

    pub fn get(&self, cell: CellIndex) -> Option<&CellEstimate> {
        self.estimates
            .binary_search_by(|e| e.cell.cmp(&cell))
            .ok()
            .map(|i| &self.estimates[i])
    }

    /// Calendar years shown in the display grid: from the first valid
    /// cohort to the last panel year.
    pub fn display_years(&self) -> (i32, i32) {
        (self.cohort_range.0, self.years.1)
    }

    /// (cohorts, calendar years) of the display grid.
    pub fn display_dims(&self) -> (usize, usize) {
        let (lo, hi) = self.display_years();
        (
            (self.cohort_range.1 - self.cohort_range.0 + 1) as usize,
            (hi - lo + 1) as usize,
        )
    }

    fn rows_over(&self, t_lo: i32, t_hi: i32) -> Vec<HeatmapRow<'_>> {
        (self.cohort_range.0..=self.cohort_range.1)
            .flat_map(|g| (t_lo..=t_hi).map(move |t| CellIndex::new(g, t)))
            .map(|cell| HeatmapRow {
                cell,
                estimate: self.get(cell),
            })
            .collect()
    }

    /// Every valid cohort by every display year; missing estimates included.
    pub fn display_rows(&self) -> Vec<HeatmapRow<'_>> {
        let (lo, hi) = self.display_years();
        self.rows_over(lo, hi)
    }

    /// Every valid cohort by every panel year.
    pub fn all_rows(&self) -> Vec<HeatmapRow<'_>> {
        self.rows_over(self.years.0, self.years.1)
    }

    /// Writes rows `g, t, s, beta, se, p_value, n_treated, n_control,
    /// estimable_flag`. With `masked`, betas with `p >= 0.05` become zero.
    pub fn write_rows(
        rows: &[HeatmapRow<'_>],
        path: impl AsRef<Path>,
        delimiter: u8,
        masked: bool,
    ) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record([
            "g",
            "t",
            "s",
            "beta",
            "se",
            "p_value",
            "n_treated",
            "n_control",
            "estimable_flag",
        ])?;
        for r in rows {
            let c = r.cell;
            let mut rec = vec![c.g.to_string(), c.t.to_string(), c.event_time().to_string()];
            match r.estimate {
                Some(e) => {
                    let significant = e.p_value < 0.05;
                    let beta = if masked && !significant { 0.0 } else { e.beta };
                    rec.extend([
                        fmt_f64(beta),
                        fmt_f64(e.se),
                        fmt_f64(e.p_value),
                        e.n_treated.to_string(),
                        e.n_control.to_string(),
                        "1".to_string(),
                    ]);
                }
                None => rec.extend(["NA", "NA", "NA", "0", "0", "0"].map(String::from)),
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        "NA".to_string()
    }
}
