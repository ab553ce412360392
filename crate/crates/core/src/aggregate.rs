//! Event-time aggregation of cohort-year cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::did::{fmt_f64, CellEstimate, CellIndex, Heatmap, InestimableCell};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Each event time uses every cohort with an estimable cell there.
    Unbalanced,
    /// A fixed cohort set, estimable over the whole horizon `[a, b]`.
    Balanced { a: i32, b: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationScheme {
    pub kind: SchemeKind,
    pub display_range: (i32, i32),
}

impl Default for AggregationScheme {
    fn default() -> Self {
        AggregationScheme {
            kind: SchemeKind::Unbalanced,
            display_range: (-15, 15),
        }
    }
}

impl AggregationScheme {
    pub fn balanced(a: i32, b: i32) -> Self {
        AggregationScheme {
            kind: SchemeKind::Balanced { a, b },
            ..Self::default()
        }
    }

    /// Event times that a panel spanning `years` can reach, within the
    /// display range.
    pub fn visible_range(&self, years: (i32, i32)) -> (i32, i32) {
        let span = years.1 - years.0;
        (self.display_range.0.max(-span), self.display_range.1.min(span))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.display_range;
        if lo > hi {
            return Err(Error::Config(format!("empty display range [{lo}, {hi}]")));
        }
        if let SchemeKind::Balanced { a, b } = self.kind {
            if !(a <= 0 && 0 <= b) {
                return Err(Error::Config(format!("balanced horizon [{a}, {b}] must contain 0")));
            }
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        self.kind.to_string()
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Unbalanced => f.write_str("unbalanced"),
            SchemeKind::Balanced { a, b } => write!(f, "balanced[{a},{b}]"),
        }
    }
}

/// Cells relabeled by event time `s = t - g`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeCells {
    pub ref_offset: i32,
    /// Keyed by `(g, s)`.
    pub cells: BTreeMap<(i32, i32), CellEstimate>,
    /// Inestimable `(g, s)`.
    pub gaps: BTreeSet<(i32, i32)>,
}

impl RelativeCells {
    pub fn from_parts(
        ref_offset: i32,
        estimates: &[CellEstimate],
        inestimable: &[InestimableCell],
    ) -> Result<Self> {
        let mut cells = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for e in estimates {
            if !seen.insert(e.cell) {
                return Err(duplicate(e.cell));
            }
            cells.insert((e.cell.g, e.event_time()), e.clone());
        }
        let mut gaps = BTreeSet::new();
        for c in inestimable {
            if !seen.insert(c.cell) {
                return Err(duplicate(c.cell));
            }
            gaps.insert((c.cell.g, c.cell.event_time()));
        }
        Ok(RelativeCells {
            ref_offset,
            cells,
            gaps,
        })
    }

    /// Every cohort seen, estimable or not.
    pub fn cohorts(&self) -> BTreeSet<i32> {
        self.cells.keys().chain(&self.gaps).map(|k| k.0).collect()
    }

    /// Smallest and largest estimable event time.
    pub fn s_range(&self) -> Option<(i32, i32)> {
        let lo = self.cells.keys().map(|k| k.1).min()?;
        let hi = self.cells.keys().map(|k| k.1).max()?;
        Some((lo, hi))
    }

    pub fn betas(&self) -> BTreeMap<(i32, i32), f64> {
        self.cells.iter().map(|(k, e)| (*k, e.beta)).collect()
    }
}

fn duplicate(cell: CellIndex) -> Error {
    Error::Validation(format!("duplicate cell (g={}, t={})", cell.g, cell.t))
}

pub fn to_relative_time(heatmap: &Heatmap) -> Result<RelativeCells> {
    RelativeCells::from_parts(heatmap.ref_offset, &heatmap.estimates, &heatmap.inestimable)
}

/// One event time of an aggregated curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub s: i32,
    /// `None` when no cohort supports `s`.
    pub estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub se: Option<f64>,
    pub n_cohorts: usize,
    pub n_persons: usize,
    /// False when too few bootstrap draws exist at `s`.
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyCurve {
    pub scheme_tag: String,
    pub ref_offset: i32,
    pub points: Vec<CurvePoint>,
    /// Fixed cohort set of a balanced scheme.
    pub cohort_set: Option<Vec<i32>>,
}

impl EventStudyCurve {
    pub fn point(&self, s: i32) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.s == s)
    }

    pub fn estimate(&self, s: i32) -> Option<f64> {
        self.point(s).and_then(|p| p.estimate)
    }

    pub fn restrict(mut self, lo: i32, hi: i32) -> Self {
        self.points.retain(|p| p.s >= lo && p.s <= hi);
        self
    }

    /// Columns `s, estimate, ci_low, ci_high, n_cohorts, n_persons,
    /// scheme_tag, se, stable`.
    pub fn write(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record([
            "s",
            "estimate",
            "ci_low",
            "ci_high",
            "n_cohorts",
            "n_persons",
            "scheme_tag",
            "se",
            "stable",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt_f64);
        for p in &self.points {
            w.write_record([
                p.s.to_string(),
                opt(p.estimate),
                opt(p.ci.map(|c| c.0)),
                opt(p.ci.map(|c| c.1)),
                p.n_cohorts.to_string(),
                p.n_persons.to_string(),
                self.scheme_tag.clone(),
                opt(p.se),
                u8::from(p.stable).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Size-weighted cohort shares at `s`. Cohorts outside `set` (when given)
/// or without a value at `s` get no weight.
pub fn cohort_weights(
    betas: &BTreeMap<(i32, i32), f64>,
    cohort_sizes: &BTreeMap<i32, usize>,
    s: i32,
    set: Option<&BTreeSet<i32>>,
) -> Result<Vec<(i32, f64)>> {
    let mut raw = Vec::new();
    for (&(g, gs), _) in betas.iter() {
        if gs != s || set.is_some_and(|set| !set.contains(&g)) {
            continue;
        }
        let n = cohort_sizes.get(&g).copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::Validation(format!("cohort {g} has no size")));
        }
        raw.push((g, n as f64));
    }
    let total: f64 = raw.iter().map(|r| r.1).sum();
    Ok(raw.into_iter().map(|(g, n)| (g, n / total)).collect())
}

/// Aggregates `(g, s) -> beta` over the listed event times.
pub(crate) fn weighted_points(
    betas: &BTreeMap<(i32, i32), f64>,
    cohort_sizes: &BTreeMap<i32, usize>,
    s_values: impl Iterator<Item = i32>,
    ref_offset: i32,
    set: Option<&BTreeSet<i32>>,
) -> Result<Vec<CurvePoint>> {
    // (s, g) ordering for range scans
    let mut by_s: BTreeMap<i32, Vec<(i32, f64)>> = BTreeMap::new();
    for (&(g, s), &b) in betas {
        if set.is_none_or(|set| set.contains(&g)) {
            by_s.entry(s).or_default().push((g, b));
        }
    }
    let mut out = Vec::new();
    for s in s_values {
        if s == -ref_offset {
            let cohorts: Vec<i32> = match set {
                Some(set) => set.iter().copied().collect(),
                None => Vec::new(),
            };
            let n_persons = cohorts.iter().map(|g| cohort_sizes.get(g).copied().unwrap_or(0)).sum();
            out.push(CurvePoint {
                s,
                estimate: Some(0.0),
                ci: Some((0.0, 0.0)),
                se: Some(0.0),
                n_cohorts: cohorts.len(),
                n_persons,
                stable: true,
            });
            continue;
        }
        let entries = by_s.get(&s).map(Vec::as_slice).unwrap_or(&[]);
        let mut num = 0.0;
        let mut den = 0usize;
        for &(g, b) in entries {
            let n = cohort_sizes.get(&g).copied().unwrap_or(0);
            if n == 0 {
                return Err(Error::Validation(format!("cohort {g} has no size")));
            }
            num += n as f64 * b;
            den += n;
        }
        out.push(CurvePoint {
            s,
            estimate: (den > 0).then(|| num / den as f64),
            ci: None,
            se: None,
            n_cohorts: entries.len(),
            n_persons: den,
            stable: true,
        });
    }
    Ok(out)
}

/// Cohort-size-weighted mean over every cohort with an estimable cell at
/// each event time between the smallest and largest observed.
pub fn aggregate_unbalanced(
    cells: &RelativeCells,
    cohort_sizes: &BTreeMap<i32, usize>,
) -> Result<EventStudyCurve> {
    let (lo, hi) = cells.s_range().unwrap_or((0, 0));
    let (lo, hi) = (lo.min(-cells.ref_offset), hi.max(-cells.ref_offset));
    let points = weighted_points(&cells.betas(), cohort_sizes, lo..=hi, cells.ref_offset, None)?;
    Ok(EventStudyCurve {
        scheme_tag: SchemeKind::Unbalanced.to_string(),
        ref_offset: cells.ref_offset,
        points,
        cohort_set: None,
    })
}

/// Cohorts with an estimable cell at every `s` in `[a, b]` other than the
/// reference slot.
pub fn balanced_cohort_set(cells: &RelativeCells, a: i32, b: i32) -> Result<BTreeSet<i32>> {
    let keys: BTreeSet<(i32, i32)> = cells.cells.keys().copied().collect();
    balanced_set_from_keys(&keys, &cells.cohorts(), a, b, cells.ref_offset)
}

pub(crate) fn balanced_set_from_keys(
    estimable: &BTreeSet<(i32, i32)>,
    candidates: &BTreeSet<i32>,
    a: i32,
    b: i32,
    ref_offset: i32,
) -> Result<BTreeSet<i32>> {
    if a > b {
        return Err(Error::Config(format!("balanced horizon [{a}, {b}] is empty")));
    }
    let set: BTreeSet<i32> = candidates
        .iter()
        .copied()
        .filter(|&g| (a..=b).filter(|&s| s != -ref_offset).all(|s| estimable.contains(&(g, s))))
        .collect();
    if set.is_empty() {
        return Err(Error::Config(format!(
            "no cohort is estimable over the whole horizon [{a}, {b}]"
        )));
    }
    Ok(set)
}

pub fn aggregate_balanced(
    cells: &RelativeCells,
    cohort_sizes: &BTreeMap<i32, usize>,
    a: i32,
    b: i32,
) -> Result<EventStudyCurve> {
    let set = balanced_cohort_set(cells, a, b)?;
    let points = weighted_points(&cells.betas(), cohort_sizes, a..=b, cells.ref_offset, Some(&set))?;
    Ok(EventStudyCurve {
        scheme_tag: SchemeKind::Balanced { a, b }.to_string(),
        ref_offset: cells.ref_offset,
        points,
        cohort_set: Some(set.into_iter().collect()),
    })
}

/// Aggregates under `scheme` and trims to its display range.
pub fn aggregate(
    cells: &RelativeCells,
    cohort_sizes: &BTreeMap<i32, usize>,
    scheme: &AggregationScheme,
) -> Result<EventStudyCurve> {
    scheme.validate()?;
    let curve = match scheme.kind {
        SchemeKind::Unbalanced => aggregate_unbalanced(cells, cohort_sizes)?,
        SchemeKind::Balanced { a, b } => aggregate_balanced(cells, cohort_sizes, a, b)?,
    };
    let (lo, hi) = scheme.display_range;
    Ok(curve.restrict(lo, hi))
}
