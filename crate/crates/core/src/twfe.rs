//! Dynamic two-way fixed effects event study, the conventional comparator.
//!
//! Person and year effects are swept out by the two-way within transform
//! of the balanced panel. The normal equations of the transformed design
//! are formed from moments of the raw indicator design, which keeps the
//! cost linear in observations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregate::{CurvePoint, EventStudyCurve};
use crate::error::{Error, Result};
use crate::inference::normal_p_value;
use crate::linalg::{PivotPlan, PivotedCholesky, GRAM_TOL};
use crate::panel::{CohortTable, ExclusionReason, PanelDataset, SizeCategory, Variable};
use crate::regression::cluster_correction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwfeSpec {
    /// Event times without an indicator; at least two.
    pub omitted: Vec<i32>,
    /// Event times outside this range are pooled into its endpoints.
    pub window: Option<(i32, i32)>,
    pub outcome: Variable,
    pub covariates: Vec<Variable>,
    pub category: Option<SizeCategory>,
    /// Add persons without any transfer as a never-treated group.
    pub include_never_treated: bool,
}

impl Default for TwfeSpec {
    fn default() -> Self {
        TwfeSpec {
            omitted: vec![-3, -4],
            window: None,
            outcome: Variable::Wage,
            covariates: vec![Variable::Age],
            category: None,
            include_never_treated: false,
        }
    }
}

impl TwfeSpec {
    pub fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<i32> = self.omitted.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(Error::Config(
                "dynamic TWFE needs at least two omitted event times".into(),
            ));
        }
        if let Some((lo, hi)) = self.window {
            if lo > hi {
                return Err(Error::Config(format!("empty event window [{lo}, {hi}]")));
            }
            if distinct.iter().any(|s| *s < lo || *s > hi) {
                return Err(Error::Config("omitted event times must lie inside the window".into()));
            }
        }
        if let Some(v) = self.covariates.iter().find(|v| !v.is_discrete()) {
            return Err(Error::Config(format!("covariate `{v}` is not discrete")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwfeCoefficient {
    pub s: i32,
    pub coef: f64,
    pub se: f64,
    pub p_value: f64,
    pub n_cohorts: usize,
    pub n_persons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwfeResult {
    /// Event-time coefficients, ascending in `s`.
    pub coefficients: Vec<TwfeCoefficient>,
    pub omitted: Vec<i32>,
    pub n_persons: usize,
    pub n_observations: usize,
    /// Covariate indicators removed for collinearity.
    pub dropped_covariates: Vec<String>,
}

impl TwfeResult {
    pub fn get(&self, s: i32) -> Option<&TwfeCoefficient> {
        self.coefficients.iter().find(|c| c.s == s)
    }

    /// Event-plot form; omitted event times appear as zeros.
    pub fn to_curve(&self) -> EventStudyCurve {
        let mut points: Vec<CurvePoint> = self
            .coefficients
            .iter()
            .map(|c| CurvePoint {
                s: c.s,
                estimate: Some(c.coef),
                ci: Some((c.coef - 1.96 * c.se, c.coef + 1.96 * c.se)),
                se: Some(c.se),
                n_cohorts: c.n_cohorts,
                n_persons: c.n_persons,
                stable: true,
            })
            .collect();
        for &s in &self.omitted {
            points.push(CurvePoint {
                s,
                estimate: Some(0.0),
                ci: Some((0.0, 0.0)),
                se: Some(0.0),
                n_cohorts: 0,
                n_persons: 0,
                stable: true,
            });
        }
        points.sort_by_key(|p| p.s);
        EventStudyCurve {
            scheme_tag: "twfe".into(),
            ref_offset: 0,
            points,
            cohort_set: None,
        }
    }
}

/// Two-way within transform of a balanced person-by-year rectangle stored
/// row-major (`person * n_years + year`).
pub fn within_transform(values: &[f64], n_persons: usize, n_years: usize) -> Vec<f64> {
    assert_eq!(values.len(), n_persons * n_years);
    let mut person_mean = vec![0.0; n_persons];
    let mut year_mean = vec![0.0; n_years];
    let mut total = 0.0;
    for i in 0..n_persons {
        for t in 0..n_years {
            let v = values[i * n_years + t];
            person_mean[i] += v;
            year_mean[t] += v;
            total += v;
        }
    }
    person_mean.iter_mut().for_each(|m| *m /= n_years as f64);
    year_mean.iter_mut().for_each(|m| *m /= n_persons as f64);
    let grand = total / (n_persons * n_years) as f64;
    let mut out = Vec::with_capacity(values.len());
    for i in 0..n_persons {
        for t in 0..n_years {
            out.push(values[i * n_years + t] - person_mean[i] - year_mean[t] + grand);
        }
    }
    out
}

/// Pooled dynamic TWFE regression with person-clustered standard errors.
pub fn estimate_dynamic_twfe(panel: &PanelDataset, cohorts: &CohortTable, spec: &TwfeSpec) -> Result<TwfeResult> {
    spec.validate()?;
    let ny = panel.n_years();
    let first = panel.first_year();

    // sample: persons with an event, plus never-treated when requested
    let mut sample: Vec<(usize, Option<i32>)> = Vec::new();
    for p in 0..panel.n_persons() {
        match cohorts.cohort_of(p, spec.category) {
            Some(g) => sample.push((p, Some(g))),
            None if spec.include_never_treated
                && cohorts.entry(p).exclusion == Some(ExclusionReason::NoTransfer) =>
            {
                sample.push((p, None))
            }
            None => {}
        }
    }
    if sample.is_empty() {
        return Err(Error::Estimation("TWFE sample is empty".into()));
    }
    let n = sample.len();
    let omitted: BTreeSet<i32> = spec.omitted.iter().copied().collect();
    let bin = |s: i32| match spec.window {
        Some((lo, hi)) => s.clamp(lo, hi),
        None => s,
    };

    // event columns and their support
    let mut support: BTreeMap<i32, (BTreeSet<i32>, usize)> = BTreeMap::new();
    for &(_, g) in &sample {
        if let Some(g) = g {
            let mut seen = BTreeSet::new();
            for t in 0..ny {
                let s = bin(first + t as i32 - g);
                if !omitted.contains(&s) && seen.insert(s) {
                    let e = support.entry(s).or_default();
                    e.0.insert(g);
                    e.1 += 1;
                }
            }
        }
    }
    let event_s: Vec<i32> = support.keys().copied().collect();
    let n_event = event_s.len();

    // covariate indicator columns, lowest level omitted
    let levels: Vec<Vec<i32>> = spec
        .covariates
        .iter()
        .map(|&v| {
            let set: BTreeSet<i32> = sample
                .iter()
                .flat_map(|&(p, _)| (0..ny).map(move |t| panel.level(v, p, t)))
                .collect();
            set.into_iter().collect()
        })
        .collect();
    let mut names: Vec<String> = event_s.iter().map(|s| format!("s={s}")).collect();
    let mut cov_offset = Vec::new();
    for (v, l) in spec.covariates.iter().zip(&levels) {
        cov_offset.push(names.len());
        names.extend(l.iter().skip(1).map(|x| format!("{v}={x}")));
    }
    let k = names.len();

    // nonzero columns per observation (all entries equal one)
    let per_obs = 1 + spec.covariates.len();
    let mut nz: Vec<u32> = Vec::with_capacity(n * ny * per_obs);
    let mut nz_off: Vec<usize> = Vec::with_capacity(n * ny + 1);
    let mut y = Vec::with_capacity(n * ny);
    for &(p, g) in &sample {
        for t in 0..ny {
            nz_off.push(nz.len());
            if let Some(g) = g {
                let s = bin(first + t as i32 - g);
                if let Ok(j) = event_s.binary_search(&s) {
                    nz.push(j as u32);
                }
            }
            for (c, (&v, l)) in spec.covariates.iter().zip(&levels).enumerate() {
                let pos = l.binary_search(&panel.level(v, p, t)).expect("level collected");
                if pos > 0 {
                    nz.push((cov_offset[c] + pos - 1) as u32);
                }
            }
            y.push(panel.value(spec.outcome, p, t));
        }
    }
    nz_off.push(nz.len());
    let cols = |o: usize| &nz[nz_off[o]..nz_off[o + 1]];

    // moments of the raw design
    let mut a = vec![vec![0.0; k]; k];
    let mut year_sums = vec![vec![0.0; k]; ny];
    let mut total = vec![0.0; k];
    let mut person_sum = vec![0.0; k];
    let mut touched: Vec<usize> = Vec::new();
    for i in 0..n {
        for t in 0..ny {
            let c = cols(i * ny + t);
            for &u in c {
                let u = u as usize;
                for &w in c {
                    a[u][w as usize] += 1.0;
                }
                year_sums[t][u] += 1.0;
                total[u] += 1.0;
                if person_sum[u] == 0.0 {
                    touched.push(u);
                }
                person_sum[u] += 1.0;
            }
        }
        for &u in &touched {
            for &w in &touched {
                a[u][w] -= person_sum[u] * person_sum[w] / ny as f64;
            }
        }
        for &u in &touched {
            person_sum[u] = 0.0;
        }
        touched.clear();
    }
    for st in &year_sums {
        for u in 0..k {
            if st[u] == 0.0 {
                continue;
            }
            for w in 0..k {
                a[u][w] -= st[u] * st[w] / n as f64;
            }
        }
    }
    let nt = (n * ny) as f64;
    for u in 0..k {
        for w in 0..k {
            a[u][w] += total[u] * total[w] / nt;
        }
    }

    let y_within = within_transform(&y, n, ny);
    let mut b = vec![0.0; k];
    for (o, yw) in y_within.iter().enumerate() {
        for &u in cols(o) {
            b[u as usize] += yw;
        }
    }

    let ch = PivotedCholesky::decompose(
        &a,
        PivotPlan {
            leading: n_event,
            trailing: 0,
        },
        GRAM_TOL,
    );
    if let Some(&j) = ch.dropped.iter().find(|&&j| j < n_event) {
        return Err(Error::Estimation(format!(
            "event-time indicator {} is collinear with the person and year effects \
             (age, period and cohort are perfectly collinear; omit more event times)",
            names[j]
        )));
    }
    let beta: Vec<f64> = ch.solve(&b).into_iter().map(|x| x.unwrap_or(0.0)).collect();

    // within-transformed residuals: x'b demeaned the same way as y
    let xb: Vec<f64> = (0..n * ny)
        .map(|o| cols(o).iter().map(|&u| beta[u as usize]).sum())
        .collect();
    let xb_within = within_transform(&xb, n, ny);
    let resid: Vec<f64> = y_within.iter().zip(&xb_within).map(|(a, b)| a - b).collect();

    // person scores over kept columns: sum_t (x_it - xbar_t) e_it
    let kept = &ch.kept;
    let rank = kept.len();
    let pos_of: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let year_mean: Vec<Vec<f64>> = year_sums
        .iter()
        .map(|st| kept.iter().map(|&c| st[c] / n as f64).collect())
        .collect();
    let mut meat = vec![vec![0.0; rank]; rank];
    let mut score = vec![0.0; rank];
    for i in 0..n {
        score.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..ny {
            let e = resid[i * ny + t];
            for &u in cols(i * ny + t) {
                if let Some(&j) = pos_of.get(&(u as usize)) {
                    score[j] += e;
                }
            }
            for (j, m) in year_mean[t].iter().enumerate() {
                score[j] -= m * e;
            }
        }
        for (u, su) in score.iter().enumerate() {
            for (w, sw) in score.iter().enumerate() {
                meat[u][w] += su * sw;
            }
        }
    }
    let bread = ch.inverse();
    let factor = cluster_correction(n, n * ny, rank);
    let var_of = |j: usize| -> f64 {
        let mut v = 0.0;
        for u in 0..rank {
            for w in 0..rank {
                v += bread[j][u] * meat[u][w] * bread[w][j];
            }
        }
        factor * v
    };

    let mut coefficients = Vec::with_capacity(n_event);
    for (j, &s) in event_s.iter().enumerate() {
        let pj = pos_of[&j];
        let se = var_of(pj).max(0.0).sqrt();
        let coef = beta[j];
        let (p_value, _) = normal_p_value(coef, se);
        let (cohorts_at, persons_at) = &support[&s];
        coefficients.push(TwfeCoefficient {
            s,
            coef,
            se,
            p_value,
            n_cohorts: cohorts_at.len(),
            n_persons: *persons_at,
        });
    }
    Ok(TwfeResult {
        coefficients,
        omitted: omitted.into_iter().collect(),
        n_persons: n,
        n_observations: n * ny,
        dropped_covariates: ch.dropped.iter().map(|&j| names[j].clone()).collect(),
    })
}

/// One event time of the side-by-side lead comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrendRow {
    pub s: i32,
    pub twfe: f64,
    pub twfe_se: f64,
    pub twfe_significant: bool,
    pub staggered: f64,
    pub staggered_se: f64,
    pub staggered_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrendReport {
    pub rows: Vec<PretrendRow>,
    pub max_abs_twfe: Option<f64>,
    pub max_abs_staggered: Option<f64>,
    /// Set when the two methods cover different lead ranges.
    pub warning: Option<String>,
}

/// Leads (`s < below`) of both methods on their common event times.
/// Significance is a two-sided normal test at 0.05.
pub fn compare_pretrends(twfe: &TwfeResult, staggered: &EventStudyCurve, below: i32) -> PretrendReport {
    let twfe_s: BTreeSet<i32> = twfe.coefficients.iter().map(|c| c.s).filter(|&s| s < below).collect();
    let stag_s: BTreeSet<i32> = staggered
        .points
        .iter()
        .filter(|p| p.s < below && p.estimate.is_some() && p.se.is_some())
        .map(|p| p.s)
        .collect();
    let common: Vec<i32> = twfe_s.intersection(&stag_s).copied().collect();
    let warning = (twfe_s != stag_s).then(|| {
        format!(
            "lead ranges differ ({} TWFE, {} staggered); report restricted to {} common event times",
            twfe_s.len(),
            stag_s.len(),
            common.len()
        )
    });
    let rows: Vec<PretrendRow> = common
        .iter()
        .map(|&s| {
            let c = twfe.get(s).expect("in set");
            let p = staggered.point(s).expect("in set");
            let est = p.estimate.expect("filtered");
            let se = p.se.expect("filtered");
            PretrendRow {
                s,
                twfe: c.coef,
                twfe_se: c.se,
                twfe_significant: c.p_value < 0.05,
                staggered: est,
                staggered_se: se,
                staggered_significant: normal_p_value(est, se).0 < 0.05,
            }
        })
        .collect();
    let max_abs = |f: fn(&PretrendRow) -> f64| rows.iter().map(|r| f(r).abs()).reduce(f64::max);
    PretrendReport {
        max_abs_twfe: max_abs(|r| r.twfe),
        max_abs_staggered: max_abs(|r| r.staggered),
        rows,
        warning,
    }
}

impl PretrendReport {
    pub fn write(&self, path: impl AsRef<std::path::Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        w.write_record([
            "s",
            "twfe",
            "twfe_se",
            "twfe_significant",
            "staggered",
            "staggered_se",
            "staggered_significant",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.s.to_string(),
                r.twfe.to_string(),
                r.twfe_se.to_string(),
                u8::from(r.twfe_significant).to_string(),
                r.staggered.to_string(),
                r.staggered_se.to_string(),
                u8::from(r.staggered_significant).to_string(),
            ])?;
        }
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        w.write_record(["max_abs", &fmt(self.max_abs_twfe), "", "", &fmt(self.max_abs_staggered), "", ""])?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate_panel, DgpConfig, EffectModel};

    #[test]
    fn within_is_idempotent() {
        let v: Vec<f64> = (0..35).map(|i| ((i * 37) % 11) as f64 * 0.7 - 2.0).collect();
        let once = within_transform(&v, 5, 7);
        let twice = within_transform(&once, 5, 7);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn one_cohort_panel() -> crate::synth::SyntheticPanel {
        simulate_panel(&DgpConfig {
            years: (2000, 2010),
            cohorts: vec![(2005, 40)],
            never_treated: 60,
            effect: EffectModel::Constant(-10.0),
            ..DgpConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn single_cohort_matches_event_study_means() {
        let sim = one_cohort_panel();
        let spec = TwfeSpec {
            covariates: vec![],
            include_never_treated: true,
            ..TwfeSpec::default()
        };
        let r = estimate_dynamic_twfe(&sim.panel, &sim.cohorts, &spec).unwrap();
        let p = &sim.panel;
        let diff = |t: usize| {
            let (mut st, mut nt, mut sc, mut nc) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..p.n_persons() {
                if sim.cohorts.entry(i).included() {
                    st += p.wage(i, t);
                    nt += 1.0;
                } else {
                    sc += p.wage(i, t);
                    nc += 1.0;
                }
            }
            st / nt - sc / nc
        };
        // omitted event times -3, -4 are years 2002, 2001
        let base = (diff(1) + diff(2)) / 2.0;
        for c in &r.coefficients {
            let t = (2005 + c.s - 2000) as usize;
            assert!((c.coef - (diff(t) - base)).abs() < 1e-8, "s={}", c.s);
        }
    }

    #[test]
    fn dual_route_with_age() {
        let sim = one_cohort_panel();
        let spec = TwfeSpec {
            include_never_treated: true,
            ..TwfeSpec::default()
        };
        let r = estimate_dynamic_twfe(&sim.panel, &sim.cohorts, &spec).unwrap();
        assert!(!r.dropped_covariates.is_empty(), "linear age trend must be absorbed");

        // explicit demeaning of each indicator column and a dense solve
        let p = &sim.panel;
        let (n, ny) = (p.n_persons(), p.n_years());
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let event_s: Vec<i32> = r.coefficients.iter().map(|c| c.s).collect();
        for &s in &event_s {
            let mut c = vec![0.0; n * ny];
            for i in 0..n {
                if sim.cohorts.entry(i).included() {
                    c[i * ny + (2005 + s - 2000) as usize] = 1.0;
                }
            }
            cols.push(c);
        }
        let ages: BTreeSet<i32> = (0..n).flat_map(|i| (0..ny).map(move |t| p.level(Variable::Age, i, t))).collect();
        for &a in ages.iter().skip(1) {
            let c: Vec<f64> = (0..n * ny)
                .map(|o| f64::from(u8::from(p.level(Variable::Age, o / ny, o % ny) == a)))
                .collect();
            cols.push(c);
        }
        let y: Vec<f64> = (0..n * ny).map(|o| p.wage(o / ny, o % ny)).collect();
        let cols: Vec<Vec<f64>> = cols.iter().map(|c| within_transform(c, n, ny)).collect();
        let yw = within_transform(&y, n, ny);
        let qr = crate::linalg::PivotedQr::decompose(
            cols,
            yw,
            PivotPlan {
                leading: event_s.len(),
                trailing: 0,
            },
            1e-9,
        );
        let b = qr.coefficients();
        for (j, c) in r.coefficients.iter().enumerate() {
            assert!((b[j].unwrap() - c.coef).abs() < 1e-6, "s={}", c.s);
        }
    }

    #[test]
    fn all_treated_single_cohort_is_collinear() {
        let sim = one_cohort_panel();
        let spec = TwfeSpec {
            covariates: vec![],
            ..TwfeSpec::default()
        };
        let r = estimate_dynamic_twfe(&sim.panel, &sim.cohorts, &spec);
        assert!(matches!(r, Err(Error::Estimation(m)) if m.contains("collinear")));
        assert!(TwfeSpec { omitted: vec![-3], ..TwfeSpec::default() }.validate().is_err());
    }
}
