//! Analytic cell p-values and the person-level bootstrap for event-study
//! curves.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::aggregate::{balanced_set_from_keys, weighted_points, AggregationScheme, EventStudyCurve, SchemeKind};
use crate::did::{fmt_f64, valid_cohort_range, CellIndex, CellEstimate, CellPlan, PreparedPanel, Scratch, TreatmentSpec};
use crate::error::{Error, Result};
use crate::panel::{CohortTable, PanelDataset, Variable};

/// Two-sided normal p-value of `beta / se`, with a flag for the degenerate
/// case `se == 0, beta != 0` (reported as `p = 0`).
pub fn normal_p_value(beta: f64, se: f64) -> (f64, bool) {
    if beta == 0.0 {
        return (1.0, false);
    }
    if se == 0.0 {
        return (0.0, true);
    }
    let z = (beta / se).abs();
    (erfc(z / std::f64::consts::SQRT_2), false)
}

pub fn cell_p_value(cell: &CellEstimate) -> f64 {
    normal_p_value(cell.beta, cell.se).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl BootstrapSpec {
    pub fn new(seed: u64) -> Self {
        BootstrapSpec {
            replicates: 999,
            level: 0.95,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} not in (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Linear interpolation between order statistics of sorted data (the
/// inclusive rule: position `q * (n - 1)`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Equal-tailed percentile interval at `level`.
pub fn percentile_band(draws: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (percentile(&sorted, tail), percentile(&sorted, 1.0 - tail))
}

fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Curve with bands, plus every replicate's estimate per event time.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub curve: EventStudyCurve,
    /// Per point of `curve`, one entry per replicate.
    pub draws: Vec<Vec<Option<f64>>>,
}

impl BootstrapResult {
    /// Long format `replicate, s, estimate`.
    pub fn write_draws(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record(["replicate", "s", "estimate"])?;
        for (p, draws) in self.curve.points.iter().zip(&self.draws) {
            for (b, d) in draws.iter().enumerate() {
                w.write_record([
                    b.to_string(),
                    p.s.to_string(),
                    d.map_or_else(|| "NA".to_string(), fmt_f64),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Everything needed to re-aggregate a resampled panel.
struct Pipeline<'a> {
    prepared: &'a PreparedPanel,
    plans: Vec<CellPlan>,
    sizes: BTreeMap<i32, usize>,
    s_values: Vec<i32>,
    ref_offset: i32,
    set: Option<BTreeSet<i32>>,
    tag: String,
}

impl Pipeline<'_> {
    fn betas(&self, weights: Option<&[u32]>) -> BTreeMap<(i32, i32), f64> {
        let agg = self.prepared.aggregates(weights);
        let mut scratch = Scratch::default();
        self.plans
            .iter()
            .filter_map(|p| {
                let b = self.prepared.cell_beta(p, &agg, &mut scratch).ok()?;
                Some(((p.cell.g, p.cell.event_time()), b))
            })
            .collect()
    }

    fn estimates(&self, weights: Option<&[u32]>) -> Result<Vec<Option<f64>>> {
        let betas = self.betas(weights);
        let pts = weighted_points(
            &betas,
            &self.sizes,
            self.s_values.iter().copied(),
            self.ref_offset,
            self.set.as_ref(),
        )?;
        Ok(pts.into_iter().map(|p| p.estimate).collect())
    }
}

/// Per-slot multiplicities of a person bootstrap stratified by cohort.
pub fn resample_weights(prepared: &PreparedPanel, seed: u64, replicate: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut w = vec![0u32; prepared.n_slots()];
    for members in prepared.cohort_members() {
        for _ in 0..members.len() {
            w[members[rng.random_range(0..members.len())]] += 1;
        }
    }
    w
}

/// Aggregated curve with pointwise percentile bands from resampling
/// persons within cohorts.
pub fn bootstrap_event_study(
    panel: &PanelDataset,
    cohorts: &CohortTable,
    spec: &TreatmentSpec,
    scheme: &AggregationScheme,
    boot: &BootstrapSpec,
    outcome: Variable,
) -> Result<BootstrapResult> {
    spec.validate()?;
    let prepared = PreparedPanel::new(panel, cohorts, spec, outcome);
    bootstrap_prepared(&prepared, spec, scheme, boot)
}

pub fn bootstrap_prepared(
    prepared: &PreparedPanel,
    spec: &TreatmentSpec,
    scheme: &AggregationScheme,
    boot: &BootstrapSpec,
) -> Result<BootstrapResult> {
    boot.validate()?;
    let years = prepared.years();
    scheme.validate()?;
    let (g_lo, g_hi) = valid_cohort_range(years, spec)?;
    let (d_lo, d_hi) = scheme.visible_range(years);

    let mut plans = Vec::new();
    for g in g_lo..=g_hi {
        for t in years.0..=years.1 {
            if t == g - spec.ref_offset {
                continue;
            }
            match prepared.plan(CellIndex::new(g, t), spec) {
                Ok(p) => plans.push(p),
                Err(Error::Inestimable { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let mut pipeline = Pipeline {
        prepared,
        plans,
        sizes: prepared.cohort_sizes(),
        s_values: Vec::new(),
        ref_offset: spec.ref_offset,
        set: None,
        tag: scheme.tag(),
    };
    let point_betas = pipeline.betas(None);
    match scheme.kind {
        SchemeKind::Unbalanced => {
            pipeline.s_values = (d_lo..=d_hi).collect();
        }
        SchemeKind::Balanced { a, b } => {
            let keys: BTreeSet<(i32, i32)> = point_betas.keys().copied().collect();
            let candidates: BTreeSet<i32> = (g_lo..=g_hi)
                .filter(|g| pipeline.sizes.contains_key(g))
                .collect();
            pipeline.set = Some(balanced_set_from_keys(&keys, &candidates, a, b, spec.ref_offset)?);
            pipeline.s_values = (a.max(d_lo)..=b.min(d_hi)).collect();
        }
    }
    // only cells that can enter the curve are needed from here on
    let wanted_s: BTreeSet<i32> = pipeline.s_values.iter().copied().collect();
    pipeline.plans.retain(|p| {
        wanted_s.contains(&p.cell.event_time())
            && pipeline.set.as_ref().is_none_or(|s| s.contains(&p.cell.g))
    });

    let mut points = weighted_points(
        &point_betas,
        &pipeline.sizes,
        pipeline.s_values.iter().copied(),
        spec.ref_offset,
        pipeline.set.as_ref(),
    )?;

    let replicates: Vec<Vec<Option<f64>>> = (0..boot.replicates)
        .into_par_iter()
        .map(|b| {
            let w = resample_weights(prepared, boot.seed, b as u64);
            pipeline.estimates(Some(&w))
        })
        .collect::<Result<_>>()?;

    let mut draws = Vec::with_capacity(points.len());
    for (i, p) in points.iter_mut().enumerate() {
        let column: Vec<Option<f64>> = replicates.iter().map(|r| r[i]).collect();
        if p.s != -spec.ref_offset {
            let got: Vec<f64> = column.iter().flatten().copied().collect();
            p.stable = 2 * got.len() >= boot.replicates;
            if !got.is_empty() {
                p.ci = Some(percentile_band(&got, boot.level));
                p.se = Some(sample_sd(&got));
            }
        }
        draws.push(column);
    }

    Ok(BootstrapResult {
        curve: EventStudyCurve {
            scheme_tag: pipeline.tag,
            ref_offset: spec.ref_offset,
            points,
            cohort_set: pipeline.set.map(|s| s.into_iter().collect()),
        },
        draws,
    })
}
