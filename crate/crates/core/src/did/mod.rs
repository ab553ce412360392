//! Treatment timing, not-yet-treated control sets and the cohort-year 2x2
//! difference-in-differences cell estimator.

mod cell;
mod design;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CohortTable, SizeCategory, Variable};

pub use cell::{
    estimate_all_cells, estimate_cell, CellEstimate, Heatmap, HeatmapRow, InestimableCell,
};
pub use design::{CellPlan, CohortAggregates, PreparedPanel, Scratch};
pub(crate) use cell::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlStrategy {
    /// Every not-yet-treated cohort.
    AllNotYetTreated,
    /// Not-yet-treated cohorts within `n` years after the treated cohort.
    NearestN(u32),
}

impl fmt::Display for ControlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlStrategy::AllNotYetTreated => f.write_str("all"),
            ControlStrategy::NearestN(n) => write!(f, "nearest_{n}"),
        }
    }
}

/// Estimator settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSpec {
    /// Years before the event at which behavior may already respond.
    pub anticipation: i32,
    /// Reference period is `g - ref_offset`.
    pub ref_offset: i32,
    pub control: ControlStrategy,
    pub category: Option<SizeCategory>,
    /// Discrete covariates expanded into indicator profiles.
    pub covariates: Vec<Variable>,
}

impl Default for TreatmentSpec {
    fn default() -> Self {
        TreatmentSpec {
            anticipation: 2,
            ref_offset: 3,
            control: ControlStrategy::AllNotYetTreated,
            category: None,
            covariates: vec![Variable::Age],
        }
    }
}

impl TreatmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.anticipation < 0 {
            return Err(Error::Config("anticipation must be non-negative".into()));
        }
        if self.ref_offset <= self.anticipation {
            return Err(Error::Config(format!(
                "reference offset {} must exceed anticipation {}",
                self.ref_offset, self.anticipation
            )));
        }
        if self.control == ControlStrategy::NearestN(0) {
            return Err(Error::Config("nearest-n control strategy needs n >= 1".into()));
        }
        if let Some(v) = self.covariates.iter().find(|v| !v.is_discrete()) {
            return Err(Error::Config(format!(
                "covariate `{v}` is not discrete and cannot form indicator profiles"
            )));
        }
        Ok(())
    }

    /// Event time of the reference period.
    pub fn reference_event_time(&self) -> i32 {
        -self.ref_offset
    }
}

/// A cohort-year cell `(g, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub g: i32,
    pub t: i32,
}

impl CellIndex {
    pub fn new(g: i32, t: i32) -> Self {
        CellIndex { g, t }
    }

    pub fn event_time(&self) -> i32 {
        self.t - self.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentStatus {
    Treated,
    Untreated,
}

impl FromStr for ControlStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(ControlStrategy::AllNotYetTreated),
            other => other
                .strip_prefix("nearest_")
                .and_then(|n| n.parse().ok())
                .map(ControlStrategy::NearestN)
                .ok_or_else(|| Error::Config(format!("unknown control strategy `{other}`"))),
        }
    }
}

/// Treated from `g - anticipation` onward.
pub fn treatment_status(g: i32, t: i32, spec: &TreatmentSpec) -> TreatmentStatus {
    if t >= g - spec.anticipation {
        TreatmentStatus::Treated
    } else {
        TreatmentStatus::Untreated
    }
}

/// Cohorts usable as treated groups: the reference year must be observed and
/// members must stay untreated through the last year when they serve as
/// controls for others.
pub fn valid_cohort_range(panel_years: (i32, i32), spec: &TreatmentSpec) -> Result<(i32, i32)> {
    let (first, last) = panel_years;
    let lo = first + spec.ref_offset;
    let hi = last - spec.anticipation - 1;
    if lo > hi {
        return Err(Error::Config(format!(
            "window too short: panel [{first}, {last}] admits cohorts [{lo}, {hi}]"
        )));
    }
    Ok((lo, hi))
}

/// Whether cohort `gp` can serve as control for cell `(g, t)`.
pub fn is_control_cohort(gp: i32, cell: CellIndex, spec: &TreatmentSpec) -> bool {
    if gp == cell.g {
        return false;
    }
    let reference = cell.g - spec.ref_offset;
    if gp - spec.anticipation <= cell.t.max(reference) {
        return false;
    }
    match spec.control {
        ControlStrategy::AllNotYetTreated => true,
        ControlStrategy::NearestN(n) => gp <= cell.g + n as i32,
    }
}

/// Persons (panel indices, ascending) untreated at both the cell year and
/// the reference year. Persons without an event never enter.
pub fn control_set(cell: CellIndex, cohorts: &CohortTable, spec: &TreatmentSpec) -> Vec<usize> {
    (0..cohorts.len())
        .filter(|&p| {
            cohorts
                .cohort_of(p, spec.category)
                .is_some_and(|gp| is_control_cohort(gp, cell, spec))
        })
        .collect()
}
